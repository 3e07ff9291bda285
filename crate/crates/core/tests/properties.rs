use std::sync::{Arc, OnceLock};

use chcda::diagnostics::{self, fit_decay_envelope, DecayStatus};
use chcda::experiments::snapshot;
use chcda::experiments::RunManifest;
use chcda::forms::{Assembler, AssembledForm, Penalty};
use chcda::observation::{CellAverageNudging, CoarseGrid};
use chcda::space::{Field, Space};
use proptest::prelude::*;

struct Fixture {
    asm: Assembler,
    mass: AssembledForm,
    cip: AssembledForm,
    nudging: CellAverageNudging,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let space = Arc::new(Space::uniform(4).unwrap());
        let asm = Assembler::new(space.clone());
        let mass = asm.assemble_mass();
        let cip = asm.assemble_cip(Penalty::DEFAULT);
        let nudging = CellAverageNudging::new(&space, CoarseGrid::new(&space, 2).unwrap()).unwrap();
        Fixture { asm, mass, cip, nudging }
    })
}

fn n_dofs() -> usize {
    fixture().asm.space().n_dofs()
}

fn field() -> impl Strategy<Value = Field> {
    prop::collection::vec(-1.0f64..1.0, n_dofs()).prop_map(Field::from_coeffs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norms_are_homogeneous(v in field(), alpha in -10.0f64..10.0) {
        let f = fixture();
        let scaled = Field::from_coeffs(v.coeffs().iter().map(|x| alpha * x).collect());
        let l2 = diagnostics::l2_norm(&f.mass, &v);
        let l2s = diagnostics::l2_norm(&f.mass, &scaled);
        prop_assert!((l2s - alpha.abs() * l2).abs() <= 1e-12 * (1.0 + l2s));
        let h = f.asm.norm_2h(&v, Penalty::DEFAULT).unwrap();
        let hs = f.asm.norm_2h(&scaled, Penalty::DEFAULT).unwrap();
        prop_assert!((hs - alpha.abs() * h).abs() <= 1e-12 * (1.0 + hs));
    }

    #[test]
    fn energy_is_even(v in field(), eps in 0.01f64..0.5) {
        let f = fixture();
        let neg = Field::from_coeffs(v.coeffs().iter().map(|x| -x).collect());
        let a = diagnostics::energy(&f.asm, &v, eps);
        let b = diagnostics::energy(&f.asm, &neg, eps);
        prop_assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn cip_form_is_symmetric(v in field(), w in field()) {
        let f = fixture();
        let a = f.cip.matrix.bilinear(v.coeffs(), w.coeffs());
        let b = f.cip.matrix.bilinear(w.coeffs(), v.coeffs());
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn cell_average_is_an_l2_contraction(v in field()) {
        let f = fixture();
        // (N v, v) = ||I_H v||^2 <= ||v||^2
        let nv = f.nudging.apply(v.coeffs());
        let proj: f64 = nv.iter().zip(v.coeffs()).map(|(a, b)| a * b).sum();
        let l2 = diagnostics::l2_norm(&f.mass, &v).powi(2);
        prop_assert!(proj >= -1e-14);
        prop_assert!(proj <= l2 * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn snapshot_codec_round_trips(v in prop::collection::vec(-1e6f64..1e6, 0..64), step in 0usize..1_000_000, t in 0.0f64..1e3) {
        let field = Field::from_coeffs(v);
        let s = snapshot::decode(&snapshot::encode(step, t, &field)).unwrap();
        prop_assert_eq!(s.step, step);
        prop_assert_eq!(s.t, t);
        prop_assert_eq!(s.field, field);
    }

    #[test]
    fn snapshot_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = snapshot::decode(&bytes);
    }

    #[test]
    fn manifest_canonical_text_round_trips(
        n in 2usize..200,
        omega in 0.0f64..1e4,
        h in 0.001f64..1.0,
        seed in any::<u64>(),
        steps in 1usize..2000,
    ) {
        let mut m = RunManifest::desk();
        m.n = n;
        m.omega = omega;
        m.h = h;
        m.seed = seed;
        m.t_final = steps as f64 * m.dt;
        m.snapshot_times = vec![0.0];
        if m.validate().is_ok() {
            let back = RunManifest::parse(&m.to_config_string()).unwrap();
            prop_assert_eq!(back.hash(), m.hash());
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn manifest_parser_never_panics(text in "[a-z_ =0-9.,#\n-]{0,200}") {
        let _ = RunManifest::parse(&text);
    }

    #[test]
    fn decay_fit_recovers_geometric_ratio(ratio in 1.02f64..1.5, a0 in 0.1f64..100.0) {
        let series: Vec<f64> = (0..400).map(|m| a0 * ratio.powi(-m) + 1e-9).collect();
        let fit = fit_decay_envelope(&series).unwrap();
        prop_assert_eq!(fit.status, DecayStatus::Decaying);
        prop_assert!((fit.ratio / ratio - 1.0).abs() < 0.01, "fit {} vs {}", fit.ratio, ratio);
    }
}
