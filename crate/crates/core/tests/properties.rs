use adverin_core::container::{decode, encode, NamedTensor};
use adverin_core::metrics::{dice, evaluate_probs, hd95, Flag, Plane};
use adverin_core::segnet::{ParamSet, SegNet};
use adverin_core::synth::{generate_dataset, GenConfig};
use adverin_core::{MaskChannels, Rng, Sample};
use proptest::prelude::*;

fn brute_hd95(a: &[(usize, usize)], b: &[(usize, usize)]) -> (f64, f64) {
    let d = |p: &(usize, usize), q: &(usize, usize)| {
        let (dr, dc) = (p.0 as f64 - q.0 as f64, p.1 as f64 - q.1 as f64);
        (dr * dr + dc * dc).sqrt()
    };
    let directed = |x: &[(usize, usize)], y: &[(usize, usize)]| {
        let mut v: Vec<f64> = x.iter().map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).collect();
        v.sort_by(f64::total_cmp);
        let rank = (0.95 * v.len() as f64).ceil() as usize - 1;
        (v[rank], v[v.len() - 1])
    };
    let (p_ab, m_ab) = directed(a, b);
    let (p_ba, m_ba) = directed(b, a);
    (p_ab.max(p_ba), m_ab.max(m_ba))
}

fn mask_strategy() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (1usize..=12, 1usize..=12).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            proptest::collection::vec(0u8..2, h * w),
            proptest::collection::vec(0u8..2, h * w),
        )
    })
}

proptest! {
    #[test]
    fn metrics_are_symmetric_and_bounded((h, w, a, b) in mask_strategy()) {
        let (pa, pb) = (Plane::new(h, w, &a).unwrap(), Plane::new(h, w, &b).unwrap());
        prop_assert_eq!(dice(&pa, &pb).unwrap(), dice(&pb, &pa).unwrap());
        prop_assert_eq!(hd95(&pa, &pb).unwrap(), hd95(&pb, &pa).unwrap());
        let (d, _) = dice(&pa, &pb).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        let (hd, flag) = hd95(&pa, &pb).unwrap();
        if flag == Flag::Ok {
            let (ba, bb) = (pa.boundary(), pb.boundary());
            let (p95, hausdorff) = brute_hd95(&ba, &bb);
            prop_assert_eq!(hd, p95);
            prop_assert!(hd <= hausdorff);
        }
        if a.iter().any(|&v| v == 1) {
            prop_assert_eq!(dice(&pa, &pa).unwrap().0, 1.0);
            prop_assert_eq!(hd95(&pa, &pa).unwrap().0, 0.0);
        }
    }

    #[test]
    fn container_round_trips_f32_values(values in proptest::collection::vec(-1e6f32..1e6, 0..50)) {
        let t = vec![
            NamedTensor::new("x", vec![values.len()], values.iter().map(|&v| v as f64).collect()),
            NamedTensor::scalar("meta.k", 3.0),
        ];
        prop_assert_eq!(decode(&encode(&t).unwrap()).unwrap(), t);
    }
}

fn sample_with_truth(truth: Vec<u8>) -> Sample {
    let image = adverin_core::Image2D::new(4, 4, vec![0.0; 16], -1.0, 1.0).unwrap();
    Sample::new(image, MaskChannels::new(1, 4, 4, truth).unwrap(), 0, "s".into()).unwrap()
}

#[test]
fn evaluate_examples() {
    let truth: Vec<u8> = (0..16).map(|i| (i % 4 < 2) as u8).collect();
    let s = sample_with_truth(truth.clone());
    let perfect: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
    let m = evaluate_probs(&perfect, &s, 0.5).unwrap();
    assert_eq!((m.per_class[0].dice, m.per_class[0].hd95, m.per_class[0].flag), (1.0, 0.0, Flag::Ok));
    let m = evaluate_probs(&[0.0; 16], &s, 0.5).unwrap();
    assert_eq!((m.per_class[0].dice, m.per_class[0].flag), (0.0, Flag::OneEmpty));
    // a zero network outputs exactly 0.5, which the >= rule makes foreground
    let net = SegNet::from_params(ParamSet::zeros(1)).unwrap();
    let all_fg = sample_with_truth(vec![1; 16]);
    let m = adverin_core::metrics::evaluate_case(&net, &all_fg, 0.5).unwrap();
    assert_eq!(m.per_class[0].dice, 1.0);
}

#[test]
fn builtin_data_invariants() {
    let data = generate_dataset(&GenConfig { per_domain: 25, ..GenConfig::default() }).unwrap();
    assert_eq!(data.len(), 100);
    for s in &data {
        let disc = s.truth.channel(0);
        let cup = s.truth.channel(1);
        assert!(disc.iter().zip(cup).all(|(&d, &c)| c <= d));
        let frac = disc.iter().map(|&v| v as f64).sum::<f64>() / disc.len() as f64;
        assert!((0.05..=0.40).contains(&frac), "{} {frac}", s.sample_id);
    }
}

#[test]
fn rng_substreams_are_independent() {
    let mut a = Rng::substream(7, 1);
    let mut b = Rng::substream(7, 2);
    let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
    let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
    assert_ne!(xs, ys);
    assert_eq!(xs, (0..8).map(|_| 0).scan(Rng::substream(7, 1), |r, _: u64| Some(r.next_u64())).collect::<Vec<_>>());
}
