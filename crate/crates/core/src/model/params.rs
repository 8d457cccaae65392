use crate::ssm::SsmParams;
use crate::tensor::{Scalar, Tensor};

/// A tree of named parameter tensors, visited in a fixed order.
pub trait Params<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Params<T> for Tensor<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((prefix.to_string(), self));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Option<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        if let Some(p) = self {
            p.collect(prefix, out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        if let Some(p) = self {
            p.collect_mut(prefix, out);
        }
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Vec<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, p) in self.iter().enumerate() {
            p.collect(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

macro_rules! impl_params {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl<T: $crate::tensor::Scalar> $crate::model::Params<T> for $ty {
            fn collect<'a>(
                &'a self,
                prefix: &str,
                out: &mut Vec<(String, &'a $crate::tensor::Tensor<T>)>,
            ) {
                $( self.$field.collect(&$crate::model::params::join(prefix, stringify!($field)), out); )*
            }

            fn collect_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, &'a mut $crate::tensor::Tensor<T>)>,
            ) {
                $( self.$field.collect_mut(&$crate::model::params::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use impl_params;

impl_params!(SsmParams<T> { a_log, d_skip, w_bc, w_delta, b_delta });
