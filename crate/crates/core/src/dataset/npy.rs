use super::DatasetError;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq)]
pub enum NpyData {
    /// `<f8`
    F64(Vec<f64>),
    /// `<i8`
    I64(Vec<i64>),
}

impl NpyData {
    fn descr(&self) -> &'static str {
        match self {
            NpyData::F64(_) => "<f8",
            NpyData::I64(_) => "<i8",
        }
    }

    fn len(&self) -> usize {
        match self {
            NpyData::F64(v) => v.len(),
            NpyData::I64(v) => v.len(),
        }
    }
}

/// A C-ordered little-endian array.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

fn shape_text(shape: &[usize]) -> String {
    match shape {
        [n] => format!("({n},)"),
        _ => format!("({})", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    }
}

/// NPY v1.0 bytes; the header is space-padded so the payload starts on a
/// 64-byte boundary.
pub fn write_npy(array: &NpyArray) -> Result<Vec<u8>, DatasetError> {
    let count: usize = array.shape.iter().product();
    if count != array.data.len() {
        return Err(DatasetError::Format(format!(
            "shape {:?} holds {count} values, data has {}",
            array.shape,
            array.data.len()
        )));
    }
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.data.descr(),
        shape_text(&array.shape)
    );
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let header_len =
        u16::try_from(header.len()).map_err(|_| DatasetError::Format("header longer than 65535 bytes".into()))?;

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 8 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &array.data {
        NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Value text following `'key':` in the header dict.
fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str, DatasetError> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| DatasetError::Format(format!("header lacks '{key}'")))?
        + pat.len();
    Ok(header[start..].trim_start())
}

fn parse_header(header: &str) -> Result<(String, Vec<usize>), DatasetError> {
    let bad = |m: String| DatasetError::Format(m);
    let descr = dict_value(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.split('\'').next())
        .ok_or_else(|| bad(format!("malformed descr in {header:?}")))?;
    if !dict_value(header, "fortran_order")?.starts_with("False") {
        return Err(bad("Fortran-ordered arrays are not supported".into()));
    }
    let shape = dict_value(header, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad(format!("malformed shape in {header:?}")))?;
    let dims = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad dimension {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((descr.to_string(), dims))
}

/// Parses NPY v1.0 `<f8` or `<i8` arrays.
pub fn read_npy(bytes: &[u8]) -> Result<NpyArray, DatasetError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(DatasetError::Format("missing \\x93NUMPY magic".into()));
    }
    if bytes[6..8] != [1, 0] {
        return Err(DatasetError::Format(format!("unsupported version {}.{}", bytes[6], bytes[7])));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_at = 10 + header_len;
    let header = bytes
        .get(10..payload_at)
        .and_then(|h| std::str::from_utf8(h).ok())
        .ok_or_else(|| DatasetError::Format("truncated or non-ASCII header".into()))?;
    let (descr, shape) = parse_header(header)?;
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| DatasetError::Format(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[payload_at..];
    if payload.len() != count * 8 {
        return Err(DatasetError::Format(format!(
            "shape {shape:?} needs {} payload bytes, file has {}",
            count * 8,
            payload.len()
        )));
    }
    let words = payload.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
    let data = match descr.as_str() {
        "<f8" => NpyData::F64(words.map(f64::from_le_bytes).collect()),
        "<i8" => NpyData::I64(words.map(i64::from_le_bytes).collect()),
        other => return Err(DatasetError::Format(format!("unsupported dtype {other}"))),
    };
    Ok(NpyArray { shape, data })
}
