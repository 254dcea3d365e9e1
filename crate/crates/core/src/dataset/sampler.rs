use super::DatasetError;
use crate::ndcore::Rng;

/// Epoch streams with a 1:1 class histogram.
///
/// Every majority window appears exactly once per epoch. The minority class
/// is repeated in whole copies, and the remainder is filled by drawing
/// minority windows without replacement, so its count matches the
/// majority. The stream is shuffled and cut into batches; the last batch
/// may be short.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    positive: Vec<usize>,
    negative: Vec<usize>,
    batch_size: usize,
    seed: u64,
}

impl BalancedSampler {
    /// `indices` and `labels` describe the training windows.
    pub fn new(indices: &[usize], labels: &[u8], batch_size: usize, seed: u64) -> Result<Self, DatasetError> {
        if batch_size == 0 {
            return Err(DatasetError::Sampler("batch size must be positive".into()));
        }
        let positive: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == 1).collect();
        let negative: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == 0).collect();
        if positive.is_empty() || negative.is_empty() {
            return Err(DatasetError::Sampler(format!(
                "training set has {} positive and {} negative windows, need both",
                positive.len(),
                negative.len()
            )));
        }
        Ok(Self {
            positive,
            negative,
            batch_size,
            seed,
        })
    }

    /// Windows drawn per epoch: twice the majority count.
    pub fn epoch_len(&self) -> usize {
        2 * self.positive.len().max(self.negative.len())
    }

    /// Flat index stream of one epoch; a pure function of seed and epoch.
    pub fn epoch_stream(&self, epoch: u64) -> Vec<usize> {
        let mut rng = Rng::new(self.seed).derive(epoch);
        let (major, minor) = if self.positive.len() >= self.negative.len() {
            (&self.positive, &self.negative)
        } else {
            (&self.negative, &self.positive)
        };
        let mut stream = major.clone();
        for _ in 0..major.len() / minor.len() {
            stream.extend_from_slice(minor);
        }
        let mut rest = minor.clone();
        rng.shuffle(&mut rest);
        stream.extend_from_slice(&rest[..major.len() % minor.len()]);
        rng.shuffle(&mut stream);
        stream
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.epoch_stream(epoch)
            .chunks(self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }
}
