//! Randomized invariant checks shared by the property suite and the
//! acceptance report. Each check runs a fixed-seed proptest runner.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

use nharq::awgn::{
    delay_profile_m2, delay_profile_m3, per_m2_closed_form, solve_m2, stationary_m3,
    transition_matrix_m2, transition_matrix_m3,
};
use nharq::fading::{build_fading_chain, solve as solve_fading};
use nharq::fbl::{epsilon_ir, SinrSegmentList};
use nharq::fsmc::build_fsmc;
use nharq::markov::{stationary_solve, TransitionMatrix};
use nharq::oharq::{oharq_delay_single, oharq_delay_stream, oharq_split_probs};
use nharq::{CodeParams, DispersionScale, FadingModel, FadingSpec, HarqConfig, Scheme};

pub const CASES: u32 = 1000;

fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        config.clone(),
        TestRng::deterministic_rng(config.rng_algorithm),
    )
}

fn run<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn ok(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn scale() -> impl Strategy<Value = DispersionScale> {
    prop_oneof![Just(DispersionScale::Bits), Just(DispersionScale::Nats)]
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::Ir), Just(Scheme::Cc)]
}

/// Segments with exact symbol counts (`base_n = 1`).
fn segments() -> impl Strategy<Value = Vec<(f64, u32)>> {
    prop::collection::vec((0.01f64..100.0, 1u32..200), 1..5)
}

fn list(segs: &[(f64, u32)]) -> SinrSegmentList {
    let pairs: Vec<(f64, f64)> = segs.iter().map(|&(g, c)| (g, f64::from(c))).collect();
    SinrSegmentList::from_pairs(1, &pairs).unwrap()
}

/// Monotonicity of the error probability: more SNR, more symbols or fewer
/// bits never hurt. The rate term `log2 N` makes the normal approximation
/// non-monotone when `k < log2 N`, so `k` starts above it.
pub fn epsilon_monotone() -> Result<(), String> {
    run(
        (
            segments(),
            10u32..400,
            scale(),
            any::<prop::sample::Index>(),
            1.0f64..4.0,
        ),
        |(segs, k, scale, pick, boost)| {
            let code = CodeParams::new(k, 100).unwrap().with_dispersion(scale);
            let base = epsilon_ir(&list(&segs), &code).unwrap();
            ok((0.0..=1.0).contains(&base), || {
                format!("epsilon {base} out of range")
            })?;
            let i = pick.index(segs.len());
            let tol = 1e-15 + 1e-12 * base;

            let mut more_snr = segs.clone();
            more_snr[i].0 *= boost;
            let e = epsilon_ir(&list(&more_snr), &code).unwrap();
            ok(e <= base + tol, || {
                format!("SNR up: {base} -> {e} for {segs:?}")
            })?;

            let mut more_symbols = segs.clone();
            more_symbols[i].1 += 1;
            let e = epsilon_ir(&list(&more_symbols), &code).unwrap();
            ok(e <= base + tol, || {
                format!("symbols up: {base} -> {e} for {segs:?}")
            })?;

            let bigger = CodeParams::new(k + 1, 100).unwrap().with_dispersion(scale);
            let e = epsilon_ir(&list(&segs), &bigger).unwrap();
            ok(e + tol >= base, || {
                format!("k up: {base} -> {e} for {segs:?}")
            })
        },
    )
}

/// Blocks of at least ten bits: below `log2 n` the approximation stops
/// being monotone and the chains reject the resulting negative mass.
fn m2_config() -> impl Strategy<Value = HarqConfig> {
    (
        scheme(),
        10u32..150,
        0.0f64..=1.0,
        0.01f64..=1.0,
        -10.0f64..15.0,
        scale(),
    )
        .prop_map(|(scheme, k, alpha, tau, snr, scale)| {
            let code = CodeParams::new(k, 100).unwrap().with_dispersion(scale);
            HarqConfig::new(code, scheme, vec![alpha], vec![tau], 1.0)
                .unwrap()
                .with_snr_db(snr)
        })
}

fn m3_config() -> impl Strategy<Value = HarqConfig> {
    (
        scheme(),
        10u32..150,
        (0.0f64..=1.0, 0.0f64..=1.0),
        (0.01f64..=1.0, 0.01f64..=1.0),
        -10.0f64..10.0,
    )
        .prop_map(|(scheme, k, (a, b), (s, t), snr)| {
            let code = CodeParams::new(k, 100).unwrap();
            HarqConfig::new(
                code,
                scheme,
                vec![a.max(b), a.min(b)],
                vec![s.max(t), s.min(t)],
                1.0,
            )
            .unwrap()
            .with_snr_db(snr)
        })
}

fn fading_model() -> impl Strategy<Value = Option<FadingModel>> {
    (0.005f64..0.2, 1usize..10, 0.0f64..20.0).prop_map(|(fd, l, snr)| {
        build_fsmc(&FadingSpec::from_normalized(
            fd,
            100,
            nharq::db_to_linear(snr),
            l,
        ))
        .ok()
    })
}

fn mix() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 4).prop_map(|v| {
        let s: f64 = v.iter().sum::<f64>().max(1e-300);
        if s < 1e-9 {
            vec![1.0, 0.0, 0.0, 0.0]
        } else {
            v.iter().map(|x| x / s).collect()
        }
    })
}

fn rows_ok(t: &TransitionMatrix, what: &str) -> Result<(), TestCaseError> {
    let err = t.max_row_sum_error();
    ok(err <= 1e-12, || format!("{what}: row sum error {err}"))?;
    ok(t.rows().flatten().all(|&v| v >= 0.0), || {
        format!("{what}: negative entry")
    })
}

/// Every built transition matrix is row-stochastic within 1e-12.
pub fn rows_stochastic() -> Result<(), String> {
    run(
        (m2_config(), m3_config(), mix(), fading_model()),
        |(c2, c3, mix, model)| {
            rows_ok(&transition_matrix_m2(&c2).unwrap(), "m=2")?;
            rows_ok(&transition_matrix_m3(&c3, &mix).unwrap(), "m=3")?;
            if let Some(m) = model {
                rows_ok(&m.transitions, "channel")?;
                rows_ok(&build_fading_chain(&c2, &m).unwrap(), "fading chain")?;
            }
            Ok(())
        },
    )
}

/// Solved chains satisfy `p P = p` within 1e-10.
pub fn stationary_residual() -> Result<(), String> {
    run(
        (m2_config(), m3_config(), fading_model()),
        |(c2, c3, model)| {
            let s = solve_m2(&c2).unwrap();
            let r = s.transitions.balance_residual(&s.stationary);
            ok(r <= 1e-10, || format!("m=2 residual {r}"))?;
            let s = stationary_m3(&c3).unwrap();
            let r = s.transitions.balance_residual(&s.stationary);
            ok(r <= 1e-10, || format!("m=3 residual {r}"))?;
            if let Some(m) = model {
                let s = solve_fading(&c2, &m).unwrap();
                let r = s.transitions.balance_residual(&s.stationary);
                ok(r <= 1e-10, || format!("fading residual {r}"))?;
            }
            Ok(())
        },
    )
}

fn stochastic_3x3() -> impl Strategy<Value = TransitionMatrix> {
    prop::collection::vec(prop::collection::vec(0.001f64..1.0, 3), 3).prop_map(|rows| {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect();
        TransitionMatrix::from_rows(&rows).unwrap()
    })
}

/// The closed-form failure mass of the three-state chain matches the
/// generic stationary solve within 1e-10.
pub fn closed_form_matches_solve() -> Result<(), String> {
    run(stochastic_3x3(), |t| {
        let closed = per_m2_closed_form(&t).unwrap();
        let generic = stationary_solve(&t).unwrap()[2];
        ok((closed - generic).abs() <= 1e-10, || {
            format!("{closed} vs {generic}")
        })
    })
}

/// Neighbouring channel states balance: `q_l P(l, l+1) = q_(l+1) P(l+1, l)`.
pub fn detailed_balance() -> Result<(), String> {
    run(fading_model(), |model| {
        let Some(m) = model else { return Ok(()) };
        for l in 0..m.states().saturating_sub(1) {
            let up = m.marginals[l] * m.transitions.get(l, l + 1);
            let down = m.marginals[l + 1] * m.transitions.get(l + 1, l);
            ok((up - down).abs() <= 1e-15 * up.max(down), || {
                format!("state {l}: {up} vs {down}")
            })?;
        }
        Ok(())
    })
}

fn normalized(total: f64, what: &str) -> Result<(), TestCaseError> {
    ok((total - 1.0).abs() <= 1e-12, || {
        format!("{what}: total mass {total}")
    })
}

/// All delay distributions carry unit mass within 1e-12.
pub fn delay_normalized() -> Result<(), String> {
    run(
        (
            0.0f64..=1.0,
            0.0f64..=1.0,
            1u64..5000,
            (0.01f64..=1.0, 0.01f64..=1.0),
            1u64..40,
            scheme(),
            -5.0f64..5.0,
        ),
        |(a, b, n, (s, t), stream, scheme, snr)| {
            let (p0, p1) = (a, (1.0 - a) * b);
            normalized(delay_profile_m2(p0, n).unwrap().total_mass(), "m=2")?;
            let taus = [s.max(t), s.min(t)];
            normalized(
                delay_profile_m3(p0, p1, &taus, n).unwrap().total_mass(),
                "m=3",
            )?;
            let cfg = HarqConfig::orthogonal(
                CodeParams::new(50, 100).unwrap(),
                scheme,
                taus.to_vec(),
                1.0,
            )
            .unwrap()
            .with_snr_db(snr);
            let splits = oharq_split_probs(&cfg).unwrap();
            let single = oharq_delay_single(&splits, &cfg.taus).unwrap();
            normalized(single.total_mass(), "orthogonal packet")?;
            normalized(
                oharq_delay_stream(&single, stream).unwrap().total_mass(),
                "orthogonal stream",
            )
        },
    )
}

/// A one-state channel turns the fading chain into the AWGN chain.
pub fn single_state_reduction() -> Result<(), String> {
    run(m2_config(), |cfg| {
        let model = FadingModel::constant(cfg.gamma0);
        let fading = build_fading_chain(&cfg, &model).unwrap();
        let awgn = transition_matrix_m2(&cfg).unwrap();
        ok(fading == awgn, || "matrices differ".into())?;
        let a = solve_m2(&cfg).unwrap().per();
        let f = solve_fading(&cfg, &model).unwrap().per();
        ok(a == f, || format!("PER {a} vs {f}"))
    })
}
