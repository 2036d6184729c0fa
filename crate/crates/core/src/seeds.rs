/// Mixes a root seed with a path of identifiers into an independent seed.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix(root ^ 0x5EED_0F_C0FFEE);
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_paths() {
        let a = derive_seed(1, &[0, 1]);
        assert_eq!(a, derive_seed(1, &[0, 1]));
        assert_ne!(a, derive_seed(1, &[1, 0]));
        assert_ne!(a, derive_seed(2, &[0, 1]));
        assert_ne!(derive_seed(1, &[]), derive_seed(1, &[0]));
    }
}
