use dpview::sharing::{recover, recover_k, share, share_in_protocol, share_k, RingValue};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

proptest! {
    #[test]
    fn round_trip(x: u32, r: u32) {
        prop_assert_eq!(recover(share(RingValue(x), RingValue(r))), RingValue(x));
    }

    #[test]
    fn in_protocol_round_trip(x: u32, z0: u32, z1: u32) {
        let p = share_in_protocol(RingValue(x), RingValue(z0), RingValue(z1));
        prop_assert_eq!(recover(p), RingValue(x));
        prop_assert_eq!(p.s0, RingValue(z0 ^ z1));
    }

    #[test]
    fn k_of_k_round_trip(x: u32, k in 1usize..6, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let words: Vec<Vec<RingValue>> = (0..k)
            .map(|_| (0..k - 1).map(|_| RingValue(rng.random())).collect())
            .collect();
        let shares = share_k(RingValue(x), &words).unwrap();
        prop_assert_eq!(shares.len(), k);
        prop_assert_eq!(recover_k(&shares), RingValue(x));
    }
}

#[test]
fn share_bits_are_balanced() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut ones = [[0u32; 32]; 2];
    let x = RingValue(0xDEAD_BEEF);
    for _ in 0..n {
        let p = share_in_protocol(x, RingValue(rng.random()), RingValue(rng.random()));
        for (s, word) in [p.s0, p.s1].iter().enumerate() {
            for (bit, count) in ones[s].iter_mut().enumerate() {
                *count += (word.0 >> bit) & 1;
            }
        }
    }
    for (s, counts) in ones.iter().enumerate() {
        for (bit, c) in counts.iter().enumerate() {
            let f = *c as f64 / n as f64;
            assert!((f - 0.5).abs() < 0.01, "share {s} bit {bit}: {f}");
        }
    }
}

// Two-sample chi-square homogeneity test over the low byte.
fn homogeneity_p(a: &[u32], b: &[u32]) -> f64 {
    let mut ha = [0f64; 256];
    let mut hb = [0f64; 256];
    for x in a {
        ha[(x & 0xFF) as usize] += 1.0;
    }
    for x in b {
        hb[(x & 0xFF) as usize] += 1.0;
    }
    let mut stat = 0.0;
    let mut bins = 0;
    for (oa, ob) in ha.iter().zip(&hb) {
        if oa + ob > 0.0 {
            stat += (oa - ob).powi(2) / (oa + ob);
            bins += 1;
        }
    }
    let dist = ChiSquared::new((bins - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn strict_subsets_hide_the_message() {
    let k = 3;
    let trials = 10_000;
    let messages = [RingValue(0x0000_0000), RingValue(0x1234_56FF)];
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let mut samples: Vec<Vec<Vec<RingValue>>> = vec![Vec::new(), Vec::new()];
    for (m, out) in messages.iter().zip(samples.iter_mut()) {
        for _ in 0..trials {
            let words: Vec<Vec<RingValue>> = (0..k)
                .map(|_| (0..k - 1).map(|_| RingValue(rng.random())).collect())
                .collect();
            out.push(share_k(*m, &words).unwrap());
        }
    }
    for subset in 1u32..(1 << k) - 1 {
        let fold = |shares: &Vec<RingValue>| {
            (0..k)
                .filter(|i| subset & (1 << i) != 0)
                .fold(0u32, |acc, i| acc ^ shares[i].0)
        };
        let a: Vec<u32> = samples[0].iter().map(fold).collect();
        let b: Vec<u32> = samples[1].iter().map(fold).collect();
        let p = homogeneity_p(&a, &b);
        assert!(p > 0.01, "subset {subset:03b}: p = {p}");
    }
    // the full set reveals the message
    let all: Vec<u32> = samples[1].iter().map(|s| recover_k(s).0).collect();
    assert!(all.iter().all(|x| *x == messages[1].0));
}
