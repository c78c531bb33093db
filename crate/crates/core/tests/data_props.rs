use actf_core::data::{decode_tensor, encode_tensor, generate, read_tensor, write_tensor, SyntheticTask, TaskKind};
use actf_core::Tensor;
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO,
        -1.0f32..1.0,
    ]
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..5)
}

fn tensor() -> impl Strategy<Value = Tensor<f32>> {
    dims().prop_flat_map(|d| {
        let n: usize = d.iter().product();
        prop::collection::vec(finite_f32(), n).prop_map(move |v| Tensor::new(d.clone(), v).unwrap())
    })
}

proptest! {
    #[test]
    fn encode_decode_is_bit_exact(t in tensor()) {
        let bytes = encode_tensor(&t).unwrap();
        let header = 8 + 4 * t.rank();
        prop_assert_eq!(bytes.len(), header + 4 * t.len());
        let back: Tensor<f32> = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn accepted_files_are_reemitted_identically(
        d in dims(),
        bits in prop::collection::vec(any::<u32>(), 0..200),
    ) {
        let n: usize = d.iter().product();
        let payload: Vec<u32> = bits.into_iter().cycle().filter(|b| f32::from_bits(*b).is_finite()).take(n).collect();
        prop_assume!(payload.len() == n);
        let mut bytes = b"ACTF".to_vec();
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&(d.len() as u16).to_le_bytes());
        for &e in &d {
            bytes.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for b in payload {
            bytes.extend_from_slice(&b.to_le_bytes());
        }
        let t: Tensor<f64> = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(encode_tensor(&t).unwrap(), bytes);
    }

    #[test]
    fn any_strict_prefix_is_rejected(t in tensor(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_tensor(&t).unwrap();
        let cut = cut.index(bytes.len());
        prop_assert!(decode_tensor::<f32>(&bytes[..cut]).is_err());
    }

    #[test]
    fn generation_is_reproducible(
        kind in prop_oneof![Just(TaskKind::Direction4), Just(TaskKind::Speed2), Just(TaskKind::Appearance4), Just(TaskKind::Mixed8)],
        frames in 2usize..4,
        seed in any::<u64>(),
        noise in 0.0f64..0.2,
    ) {
        let task = SyntheticTask { kind, frames, height: 12, width: 13, per_class: 2, noise, seed };
        let a = generate::<f64>(&task).unwrap();
        let b = generate::<f64>(&task).unwrap();
        prop_assert_eq!(a.len(), kind.n_classes() * 2);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::<f32>::from_fn(&[3, 4, 5], |i| (i as f32 * 0.37).sin());
    let p = dir.path().join("x.bin");
    write_tensor(&p, &t).unwrap();
    let back: Tensor<f32> = read_tensor(&p).unwrap();
    assert_eq!(back, t);
    assert_eq!(std::fs::read(&p).unwrap(), encode_tensor(&t).unwrap());
}

#[test]
fn direction_classes_are_balanced() {
    let task = SyntheticTask {
        kind: TaskKind::Direction4,
        frames: 8,
        height: 32,
        width: 32,
        per_class: 50,
        noise: 0.05,
        seed: 1,
    };
    let samples = generate::<f64>(&task).unwrap();
    assert_eq!(samples.len(), 200);
    for c in 0..4 {
        assert_eq!(samples.iter().filter(|s| s.label == c).count(), 50);
    }
    assert!(samples.iter().all(|s| s.video.dims() == [8, 3, 32, 32]));
}
