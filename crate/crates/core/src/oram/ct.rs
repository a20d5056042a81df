//! Branch-free selection primitives.

use std::hint::black_box;

/// All ones if `a == b`, zero otherwise.
#[inline]
pub fn ct_eq_mask(a: u64, b: u64) -> u64 {
    let x = black_box(a ^ b);
    // (x | -x) has the top bit set iff x != 0.
    ((x | x.wrapping_neg()) >> 63).wrapping_sub(1)
}

/// `a` where `mask` is all ones, `b` where it is zero.
#[inline]
pub fn ct_select_u64(mask: u64, a: u64, b: u64) -> u64 {
    (a & mask) | (b & !mask)
}

/// Types whose values can be chosen between without data-dependent branches.
pub trait CtSelect: Sized {
    fn ct_select(mask: u64, a: &Self, b: &Self) -> Self;
}

impl CtSelect for u64 {
    fn ct_select(mask: u64, a: &Self, b: &Self) -> Self {
        ct_select_u64(mask, *a, *b)
    }
}

impl<const N: usize> CtSelect for [u64; N] {
    fn ct_select(mask: u64, a: &Self, b: &Self) -> Self {
        std::array::from_fn(|i| ct_select_u64(mask, a[i], b[i]))
    }
}

impl CtSelect for Vec<u64> {
    fn ct_select(mask: u64, a: &Self, b: &Self) -> Self {
        assert_eq!(a.len(), b.len(), "rows have a fixed width");
        a.iter().zip(b).map(|(x, y)| ct_select_u64(mask, *x, *y)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_and_select() {
        assert_eq!(ct_eq_mask(5, 5), u64::MAX);
        assert_eq!(ct_eq_mask(5, 6), 0);
        assert_eq!(ct_eq_mask(0, u64::MAX), 0);
        assert_eq!(ct_select_u64(u64::MAX, 1, 2), 1);
        assert_eq!(ct_select_u64(0, 1, 2), 2);
        assert_eq!(<[u64; 2]>::ct_select(0, &[1, 2], &[3, 4]), [3, 4]);
    }
}
