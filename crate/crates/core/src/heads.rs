//! Head-wise reshaping between `L×d_model` and `L×H×d_h`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeadLayout {
    heads: usize,
    head_dim: usize,
}

impl HeadLayout {
    pub fn new(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Layout { d_model, heads });
        }
        Ok(Self {
            heads,
            head_dim: d_model / heads,
        })
    }

    pub fn from_head_dim(heads: usize, head_dim: usize) -> Result<Self> {
        if heads == 0 || head_dim == 0 {
            return Err(Error::Layout {
                d_model: heads * head_dim,
                heads,
            });
        }
        Ok(Self { heads, head_dim })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// `out[l, h, j] = t[l, h·d_h + j]`.
pub fn split_heads<T: Scalar>(t: &Tensor<T>, layout: HeadLayout) -> Result<Tensor<T>> {
    let (l, d_model) = t.dims2("split_heads")?;
    if d_model != layout.d_model() {
        return Err(Error::Layout {
            d_model,
            heads: layout.heads(),
        });
    }
    // Row-major storage already places head h of token l at l·d_model + h·d_h.
    t.clone().reshape(&[l, layout.heads(), layout.head_dim()])
}

/// Inverse of [`split_heads`].
pub fn concat_heads<T: Scalar>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let (l, h, d_h) = s.dims3("concat_heads")?;
    s.clone().reshape(&[l, h * d_h])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_example() {
        let t = Tensor::<f64>::new(&[1, 4], alloc::vec![1., 2., 3., 4.]).unwrap();
        let layout = HeadLayout::new(4, 2).unwrap();
        let s = split_heads(&t, layout).unwrap();
        assert_eq!(s.shape(), &[1, 2, 2]);
        assert_eq!(s.get(&[0, 0, 1]).unwrap(), 2.0);
        assert_eq!(s.get(&[0, 1, 0]).unwrap(), 3.0);
        assert_eq!(concat_heads(&s).unwrap(), t);
    }

    #[test]
    fn single_head_inserts_unit_axis() {
        let t = Tensor::<f64>::from_fn(&[3, 5], |i| i as f64);
        let s = split_heads(&t, HeadLayout::new(5, 1).unwrap()).unwrap();
        assert_eq!(s.shape(), &[3, 1, 5]);
        assert_eq!(s.data(), t.data());
        assert_eq!(concat_heads(&s).unwrap().shape(), &[3, 5]);
    }

    #[test]
    fn indivisible_width_is_a_layout_error() {
        assert_eq!(HeadLayout::new(6, 4), Err(Error::Layout { d_model: 6, heads: 4 }));
        let t = Tensor::<f64>::zeros(&[2, 6]);
        let layout = HeadLayout::new(8, 4).unwrap();
        assert!(matches!(split_heads(&t, layout), Err(Error::Layout { .. })));
    }

    proptest! {
        #[test]
        fn split_concat_bijection(l in 1usize..=8, h in 1usize..=8, d_h in 1usize..=8) {
            let layout = HeadLayout::from_head_dim(h, d_h).unwrap();
            let t = Tensor::<f64>::from_fn(&[l, h * d_h], |i| i as f64 * 0.5 - 3.0);
            let s = split_heads(&t, layout).unwrap();
            for li in 0..l {
                for hi in 0..h {
                    for j in 0..d_h {
                        prop_assert_eq!(s.get(&[li, hi, j]).unwrap(), t.get(&[li, hi * d_h + j]).unwrap());
                    }
                }
            }
            prop_assert_eq!(&concat_heads(&s).unwrap(), &t);
            prop_assert_eq!(split_heads(&concat_heads(&s).unwrap(), layout).unwrap(), s);
        }
    }
}
