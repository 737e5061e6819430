//! Property-based invariants of the sharing layer and gate library.

use proptest::prelude::*;

use obliq_core::correlated::setup_keys;
use obliq_core::harness::{deal_vec, open_bits, open_vec};
use obliq_core::oracle::prim;
use obliq_core::primitives as p;
use obliq_core::primitives::ShareVec;
use obliq_core::runtime::{run_protocol, TransportKind};
use obliq_core::share::{self, SharingMode};

proptest! {
    #[test]
    fn share_round_trip_boolean(x in any::<u64>(), seed in any::<u64>()) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        use rand::SeedableRng;
        let (a, b, c) = share::share(x, SharingMode::Boolean, &mut rng);
        prop_assert_eq!(share::reconstruct(a, b, c).unwrap(), x);
        prop_assert_eq!(a.hi, b.lo);
        prop_assert_eq!(b.hi, c.lo);
        prop_assert_eq!(c.hi, a.lo);
    }

    #[test]
    fn share_round_trip_arith(x in any::<u64>(), seed in any::<u64>()) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        use rand::SeedableRng;
        let (a, b, c) = share::share(x, SharingMode::Arithmetic, &mut rng);
        prop_assert_eq!(share::reconstruct(a, b, c).unwrap(), x);
    }

    #[test]
    fn zero_stream_cancels(master in any::<u64>(), draws in 1usize..64) {
        let mut keys = setup_keys(master);
        for _ in 0..draws {
            let x = keys.iter_mut().map(|k| k.zero_share_stream()).fold(0u64, |a, b| a ^ b);
            prop_assert_eq!(x, 0);
        }
    }

    #[test]
    fn random_share_stream_cancels_replication(master in any::<u64>()) {
        let mut keys = setup_keys(master);
        let shares: Vec<(u64, u64)> = keys.iter_mut().map(|k| k.random_share_stream()).collect();
        for i in 0..3 {
            prop_assert_eq!(shares[i].1, shares[(i + 1) % 3].0);
        }
    }
}

fn run_gates(xs: Vec<u64>, ys: Vec<u64>) -> (Vec<u64>, Vec<u64>, Vec<u64>, Vec<u64>) {
    let a = deal_vec(&xs, SharingMode::Boolean, 1);
    let b = deal_vec(&ys, SharingMode::Boolean, 2);
    let inputs: [Vec<ShareVec>; 3] = [0, 1, 2].map(|i| vec![a[i].clone(), b[i].clone()]);
    let runs = run_protocol(3, TransportKind::InProcess, inputs, |ctx, input: Vec<ShareVec>| {
        let and = p::and_gate(ctx, &input[0], &input[1]).unwrap();
        let eq = p::eq(ctx, &input[0], &input[1], 64).unwrap();
        let lt = p::lt(ctx, &input[0], &input[1]).unwrap();
        let sum = p::rca_add(ctx, &input[0], &input[1]).unwrap();
        Ok(vec![and, eq, lt, sum])
    })
    .unwrap();
    let col = |k: usize| [0, 1, 2].map(|i| runs[i].output[k].clone());
    (
        open_vec(&col(0)).unwrap(),
        open_bits(&col(1)).unwrap(),
        open_bits(&col(2)).unwrap(),
        open_vec(&col(3)).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn gates_match_plaintext(pairs in proptest::collection::vec((any::<u64>(), any::<u64>()), 1..24)) {
        let xs: Vec<u64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<u64> = pairs.iter().map(|p| p.1).collect();
        let (and, eq, lt, sum) = run_gates(xs.clone(), ys.clone());
        for i in 0..xs.len() {
            prop_assert_eq!(and[i], xs[i] & ys[i]);
            prop_assert_eq!(eq[i], prim::eq(xs[i], ys[i], 64));
            prop_assert_eq!(lt[i], prim::lt_signed(xs[i], ys[i], 64));
            prop_assert_eq!(sum[i], prim::rca(xs[i], ys[i], 64));
        }
    }
}
