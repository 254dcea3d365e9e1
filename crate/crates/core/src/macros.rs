/// Declares a struct of named parameter tensors, generic over the leaf type
/// so the same layout serves stored values (`Tensor`), tape handles (`Var`)
/// and optimizer moments.
macro_rules! param_struct {
    (
        $(#[$meta:meta])*
        pub struct $name:ident {
            $( $(#[$fmeta:meta])* $field:ident => $key:literal ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = $crate::ndcore::Tensor> {
            $( $(#[$fmeta])* pub $field: T, )*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> $name<U> {
                $name { $( $field: f(&$crate::params::join(prefix, $key), &self.$field), )* }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
                $( f($crate::params::join(prefix, $key), &self.$field); )*
            }

            pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut T)) {
                $( f($crate::params::join(prefix, $key), &mut self.$field); )*
            }
        }
    };
}
