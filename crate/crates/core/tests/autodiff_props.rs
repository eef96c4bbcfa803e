use lible_core::autodiff::{evaluate, softplus, OpKind, Tape};
use lible_core::gradcheck::grad_check;
use lible_core::params::{BoundParams, ParamSet};
use lible_core::{Matrix, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Step {
    Unary(OpKind),
    /// Elementwise op against a fresh parameter of the current shape.
    Binary(OpKind, String),
    /// Right-multiply by a fresh `cols × k` parameter.
    MatMul(String),
    LnSoftplus,
}

#[derive(Debug)]
struct Graph {
    input: String,
    steps: Vec<Step>,
    params: ParamSet,
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
}

fn random_graph(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let (rows, mut cols) = (rng.random_range(1..=8), rng.random_range(1..=8));
    params.insert("p0", random_matrix(rows, cols, &mut rng));
    let depth = rng.random_range(1..=6);
    let mut steps = Vec::new();
    for k in 1..=depth {
        let name = format!("p{k}");
        let step = match rng.random_range(0..10) {
            0 => Step::Unary(OpKind::Sigmoid),
            1 => Step::Unary(OpKind::Softplus),
            2 => Step::Unary(OpKind::Square),
            3 => Step::Unary(OpKind::SoftmaxRows),
            4 => Step::LnSoftplus,
            5 => Step::Unary(OpKind::Scale(rng.random_range(-2.0..2.0))),
            6 => {
                params.insert(name.clone(), random_matrix(rows, cols, &mut rng));
                Step::Binary(OpKind::Add, name)
            }
            7 => {
                params.insert(name.clone(), random_matrix(rows, cols, &mut rng));
                Step::Binary(OpKind::Sub, name)
            }
            8 => {
                params.insert(name.clone(), random_matrix(rows, cols, &mut rng));
                Step::Binary(OpKind::Mul, name)
            }
            _ => {
                let out = rng.random_range(1..=8);
                params.insert(name.clone(), random_matrix(cols, out, &mut rng));
                cols = out;
                Step::MatMul(name)
            }
        };
        // keep magnitudes bounded so exp-type ops stay well conditioned
        if matches!(step, Step::Unary(OpKind::Square)) {
            steps.push(Step::Unary(OpKind::Sigmoid));
        }
        steps.push(step);
    }
    if rng.random_bool(0.5) {
        steps.push(Step::Unary(OpKind::SumRows));
    }
    Graph {
        input: "p0".into(),
        steps,
        params,
    }
}

fn build(graph: &Graph, tape: &mut Tape, bound: &BoundParams) -> Result<lible_core::autodiff::NodeId> {
    let mut cur = bound.id(&graph.input)?;
    for step in &graph.steps {
        cur = match step {
            Step::Unary(kind) => tape.forward(*kind, &[cur])?,
            Step::Binary(kind, name) => {
                let p = bound.id(name)?;
                tape.forward(*kind, &[cur, p])?
            }
            Step::MatMul(name) => {
                let p = bound.id(name)?;
                tape.matmul(cur, p)?
            }
            Step::LnSoftplus => {
                let s = tape.softplus(cur)?;
                tape.ln(s)?
            }
        };
    }
    tape.sum(cur)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_graphs_match_finite_differences(seed in any::<u64>()) {
        let graph = random_graph(seed);
        let report = grad_check(|t, b| build(&graph, t, b), &graph.params, 1e-5, 1e-4).unwrap();
        let worst = report.worst().map(|w| (w.name.clone(), w.max_deviation));
        prop_assert!(report.passed(), "graph {:?}: worst {:?}", graph.steps, worst);
    }

    #[test]
    fn softmax_rows_is_a_distribution(
        rows in 1usize..6,
        cols in 1usize..8,
        seed in any::<u64>(),
        spread in 0.1f64..800.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-spread..spread));
        let s = evaluate(OpKind::SoftmaxRows, &[&x]).unwrap();
        for row in s.row_iter() {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(shift in -300.0f64..300.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(3, 4, |_, _| rng.random_range(-5.0..5.0));
        let a = evaluate(OpKind::SoftmaxRows, &[&x]).unwrap();
        let b = evaluate(OpKind::SoftmaxRows, &[&x.map(|v| v + shift)]).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_is_positive_and_above_identity(x in -700.0f64..700.0) {
        let s = softplus(x);
        prop_assert!(s.is_finite());
        prop_assert!(s >= x.max(0.0));
        prop_assert!(s <= x.max(0.0) + std::f64::consts::LN_2 + 1e-15);
        prop_assert!(s > 0.0);
    }
}

#[test]
fn softplus_extremes() {
    assert_eq!(softplus(1e6), 1e6);
    assert!(softplus(-30.0) > 0.0);
    assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
}
