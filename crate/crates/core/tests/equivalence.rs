use flashmhf_core::init::normal_tensor;
use flashmhf_core::kernel::{flashmhf_forward, sramffn_backward_dkuv, sramffn_backward_dq_dr, sramffn_forward};
use flashmhf_core::ledger::{
    backward_dkuv_closed_form, backward_dq_dr_closed_form, peak_closed_form, CountShape, Method,
};
use flashmhf_core::model::{flashmhf_forward_reference, init_params_with_std, mixture_reference};
use flashmhf_core::naive::{mhffn_core_tracked, mhffn_forward, NaiveMhffnParams};
use flashmhf_core::reference::{swiglu_forward_tracked, SwiGluParams};
use flashmhf_core::tensor::normwise_rel_error;
use flashmhf_core::{FlashDims, FlashMhfParams, HeadLayout, MemoryLedger, Tensor, TileSpec};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Cfg {
    l: usize,
    h: usize,
    e: usize,
    d_e: usize,
    d_h: usize,
    bs: usize,
    bi: usize,
    seed: u64,
}

fn cfg() -> impl Strategy<Value = Cfg> {
    (1usize..40, 1usize..4, 1usize..4, 1usize..20, 1usize..9, 1usize..17, 1usize..17, any::<u64>())
        .prop_map(|(l, h, e, d_e, d_h, bs, bi, seed)| Cfg { l, h, e, d_e, d_h, bs, bi, seed })
}

fn inputs(c: &Cfg) -> [Tensor; 5] {
    let sub = [c.h, c.e, c.d_e, c.d_h];
    let logits: Tensor = normal_tensor(&[c.l, c.h, c.e], 1.0, c.seed, "p");
    [
        normal_tensor(&[c.l, c.h, c.d_h], 1.0, c.seed, "q"),
        normal_tensor(&sub, 1.0, c.seed, "k"),
        normal_tensor(&sub, 1.0, c.seed, "u"),
        normal_tensor(&sub, 1.0, c.seed, "v"),
        logits.map(|p| 1.0 / (1.0 + (-p).exp()) / c.e as f64),
    ]
}

fn shape(c: &Cfg) -> CountShape {
    CountShape {
        seq_len: c.l,
        heads: c.h,
        experts: c.e,
        expert_dim: c.d_e,
        head_dim: c.d_h,
        d_model: c.h * c.d_h,
        tiles: TileSpec::new(c.bs, c.bi).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn tiled_forward_matches_dense(c in cfg()) {
        let [q, k, u, v, r] = inputs(&c);
        let tiles = TileSpec::new(c.bs, c.bi).unwrap();
        let want = mixture_reference(&q, &k, &u, &v, &r).unwrap();
        let got = sramffn_forward(&q, &k, &u, &v, &r, tiles, &mut MemoryLedger::new()).unwrap();
        prop_assert!(normwise_rel_error(&got, &want).unwrap() < 1e-10);

        let got32 = sramffn_forward(
            &q.cast::<f32>(), &k.cast(), &u.cast(), &v.cast(), &r.cast(), tiles, &mut MemoryLedger::new(),
        ).unwrap();
        prop_assert!(normwise_rel_error(&got32.cast::<f64>(), &want).unwrap() < 2e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn production_forward_matches_reference(c in cfg()) {
        let dims = FlashDims::with_expert_dim(HeadLayout::from_head_dim(c.h, c.d_h).unwrap(), c.e, c.d_e).unwrap();
        let p: FlashMhfParams = init_params_with_std(&dims, c.seed, 0.5);
        let x: Tensor = normal_tensor(&[c.l, dims.d_model()], 1.0, c.seed, "x");
        let tiles = TileSpec::new(c.bs, c.bi).unwrap();
        let want = flashmhf_forward_reference(&x, &p, &dims, None).unwrap();
        let got = flashmhf_forward(&x, &p, &dims, tiles, &mut MemoryLedger::new()).unwrap();
        prop_assert!(normwise_rel_error(&got, &want).unwrap() < 1e-10);
    }

    #[test]
    fn measured_peaks_equal_closed_forms(c in cfg()) {
        let s = shape(&c);
        let [q, k, u, v, r] = inputs(&c);

        let mut flash = MemoryLedger::new();
        sramffn_forward(&q, &k, &u, &v, &r, s.tiles, &mut flash).unwrap();
        prop_assert_eq!(flash.peak(), peak_closed_form(&s, Method::FlashMhf, 1));
        prop_assert_eq!(flash.live(), 0);
        prop_assert_eq!(flash.replay_peak(), flash.peak());

        let d_ff = s.d_ff();
        let nk: Tensor = normal_tensor(&[c.h, d_ff, c.d_h], 1.0, c.seed, "nk");
        let mut naive = MemoryLedger::new();
        mhffn_core_tracked(&q, &nk, &nk, &nk, &mut naive).unwrap();
        prop_assert_eq!(naive.peak(), peak_closed_form(&s, Method::NaiveMhffn, 1));
        prop_assert_eq!(naive.live(), 0);

        let d = s.d_model;
        let sw = SwiGluParams::<f64> {
            w_up: normal_tensor(&[d, d_ff], 1.0, c.seed, "up"),
            w_gate: normal_tensor(&[d, d_ff], 1.0, c.seed, "gate"),
            w_down: normal_tensor(&[d_ff, d], 1.0, c.seed, "down"),
        };
        let x: Tensor = normal_tensor(&[c.l, d], 1.0, c.seed, "x");
        let mut swl = MemoryLedger::new();
        swiglu_forward_tracked(&x, &sw, &mut swl).unwrap();
        prop_assert_eq!(swl.peak(), peak_closed_form(&s, Method::SwiGlu, 1));
        prop_assert_eq!(swl.live(), 0);

        let ds: Tensor = normal_tensor(&[c.l, c.h, c.d_h], 1.0, c.seed, "ds");
        let mut b1 = MemoryLedger::new();
        sramffn_backward_dq_dr(&q, &k, &u, &v, &r, &ds, s.tiles, &mut b1).unwrap();
        prop_assert_eq!(b1.peak(), backward_dq_dr_closed_form(&s));
        let mut b2 = MemoryLedger::new();
        sramffn_backward_dkuv(&q, &k, &u, &v, &r, &ds, s.tiles, &mut b2).unwrap();
        prop_assert_eq!(b2.peak(), backward_dkuv_closed_form(&s));
        prop_assert_eq!(b1.live() + b2.live(), 0);
    }
}

#[test]
fn flash_peak_is_linear_in_sequence_and_naive_grows_with_heads() {
    let base = |l: usize, h: usize| CountShape {
        seq_len: l,
        heads: h,
        experts: 2,
        expert_dim: 24,
        head_dim: 8,
        d_model: h * 8,
        tiles: TileSpec::default(),
    };
    let flash = |l| peak_closed_form(&base(l, 4), Method::FlashMhf, 1);
    assert_eq!(flash(200) - flash(100), flash(300) - flash(200));
    assert_eq!(flash(200) - flash(100), 100 * 32);
    let naive = |h| peak_closed_form(&base(64, h), Method::NaiveMhffn, 1);
    assert_eq!(naive(3) - naive(2), 3 * 64 * 48 + 64 * 8);
    assert_eq!(naive(5) - naive(4), naive(3) - naive(2));
}

#[test]
fn naive_with_one_head_equals_dense_core() {
    // Single-head naive core on Q equals the E=1, R=1 mixture.
    let c = Cfg { l: 9, h: 1, e: 1, d_e: 7, d_h: 3, bs: 4, bi: 3, seed: 5 };
    let [q, k, u, v, _] = inputs(&c);
    let r = Tensor::full(&[c.l, 1, 1], 1.0);
    let want = mixture_reference(&q, &k, &u, &v, &r).unwrap();
    let kk = k.reshape(&[1, 7, 3]).unwrap();
    let uu = u.reshape(&[1, 7, 3]).unwrap();
    let vv = v.reshape(&[1, 7, 3]).unwrap();
    let got = mhffn_core_tracked(&q, &kk, &uu, &vv, &mut MemoryLedger::new()).unwrap();
    assert!(normwise_rel_error(&got, &want).unwrap() < 1e-12);
    let p = NaiveMhffnParams::<f64> {
        w_in: Tensor::identity(3),
        keys: kk,
        ups: uu,
        values: vv,
        w_out: Tensor::identity(3),
    };
    let x = q.reshape(&[9, 3]).unwrap();
    let full = mhffn_forward(&x, &p).unwrap();
    assert!(normwise_rel_error(&full, &want.reshape(&[9, 3]).unwrap()).unwrap() < 1e-12);
}
