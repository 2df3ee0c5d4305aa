#![allow(dead_code)]

use motionalign::rotation::{cross, gram_schmidt};
use motionalign::skeleton::{graph_geometry, SkeletonModel};
use motionalign::tensor::{cosine_similarity, gradcheck, Graph, Tensor, Var};
use motionalign::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;

pub type OpFn = for<'g> fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>;

#[derive(Clone, Copy)]
pub enum Domain {
    Any,
    /// Entries in `[0.5, 2]`.
    Positive,
    /// `|x|` in `[0.5, 2]`, either sign.
    AwayFromZero,
}

pub struct OpCase {
    pub name: &'static str,
    pub shapes: &'static [&'static [usize]],
    pub domain: Domain,
    pub f: OpFn,
}

fn first<'g>(xs: &[Var<'g>]) -> Var<'g> {
    xs[0]
}

pub fn op_cases() -> Vec<OpCase> {
    fn case(
        name: &'static str,
        shapes: &'static [&'static [usize]],
        domain: Domain,
        f: OpFn,
    ) -> OpCase {
        OpCase {
            name,
            shapes,
            domain,
            f,
        }
    }
    use Domain::*;
    vec![
        case("add", &[&[3, 4], &[3, 4]], Any, |_, x| x[0].add(x[1])),
        case("sub", &[&[3, 4], &[3, 4]], Any, |_, x| x[0].sub(x[1])),
        case("mul", &[&[3, 4], &[3, 4]], Any, |_, x| x[0].mul(x[1])),
        case("scale", &[&[3, 4]], Any, |_, x| Ok(first(x).scale(-1.7))),
        case("neg", &[&[3, 4]], Any, |_, x| Ok(first(x).neg())),
        case("add_scalar", &[&[3, 4]], Any, |_, x| {
            Ok(first(x).add_scalar(0.3))
        }),
        case("mul_col", &[&[3, 4], &[3, 1]], Any, |_, x| {
            x[0].mul_col(x[1])
        }),
        case("add_row", &[&[3, 4], &[4]], Any, |_, x| x[0].add_row(x[1])),
        case("sqrt", &[&[3, 4]], Positive, |_, x| Ok(first(x).sqrt())),
        case("recip", &[&[3, 4]], AwayFromZero, |_, x| {
            Ok(first(x).recip())
        }),
        case("square", &[&[3, 4]], Any, |_, x| Ok(first(x).square())),
        case("exp", &[&[3, 4]], Any, |_, x| Ok(first(x).exp())),
        case("tanh", &[&[3, 4]], Any, |_, x| Ok(first(x).tanh())),
        case("gelu", &[&[3, 4]], Any, |_, x| Ok(first(x).gelu())),
        case("matmul", &[&[3, 4], &[4, 2]], Any, |_, x| x[0].matmul(x[1])),
        case("matmul_batched", &[&[2, 3, 4], &[2, 4, 2]], Any, |_, x| {
            x[0].matmul(x[1])
        }),
        case("matmul_nt", &[&[2, 3, 4], &[2, 5, 4]], Any, |_, x| {
            x[0].matmul_nt(x[1])
        }),
        case("softmax_last", &[&[3, 4]], Any, |_, x| first(x).softmax(1)),
        case("softmax_first", &[&[3, 4]], Any, |_, x| first(x).softmax(0)),
        case("layer_norm", &[&[3, 5], &[5], &[5]], Any, |_, x| {
            x[0].layer_norm(x[1], x[2], 1e-5)
        }),
        case("sum", &[&[3, 4]], Any, |_, x| Ok(first(x).sum().square())),
        case("mean", &[&[3, 4]], Any, |_, x| Ok(first(x).mean().square())),
        case("sum_axis0", &[&[3, 4]], Any, |_, x| first(x).sum_axis(0)),
        case("sum_axis1", &[&[2, 3, 4]], Any, |_, x| first(x).sum_axis(1)),
        case("l2_norm", &[&[3, 4]], AwayFromZero, |_, x| {
            first(x).l2_norm(1)
        }),
        case("slice", &[&[3, 5]], Any, |_, x| first(x).slice(1, 1, 3)),
        case("reshape", &[&[3, 4]], Any, |_, x| first(x).reshape(&[2, 6])),
        case("permute", &[&[2, 3, 4]], Any, |_, x| {
            first(x).permute(&[2, 0, 1])
        }),
        case("dot", &[&[5], &[5]], Any, |_, x| x[0].dot(x[1])),
        case("concat0", &[&[2, 3], &[1, 3]], Any, |g, x| {
            g.concat(&[x[0], x[1]], 0)
        }),
        case("concat1", &[&[2, 3], &[2, 2]], Any, |g, x| {
            g.concat(&[x[0], x[1]], 1)
        }),
        case("cosine", &[&[5], &[5]], AwayFromZero, |_, x| {
            cosine_similarity(x[0], x[1])
        }),
        case("cross", &[&[4, 3], &[4, 3]], Any, |_, x| cross(x[0], x[1])),
        case("gram_schmidt", &[&[4, 6]], AwayFromZero, |_, x| {
            gram_schmidt(first(x), 1e-8)
        }),
        case("forward_kinematics", &[&[2, 144]], AwayFromZero, |g, x| {
            let m = SkeletonModel::canonical();
            Ok(graph_geometry(&m, g, first(x), 1e-8)?.joints)
        }),
    ]
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], domain: Domain) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match domain {
            Domain::Any => rng.random_range(-1.5..1.5),
            Domain::Positive => rng.random_range(0.5..2.0),
            Domain::AwayFromZero => {
                let m: f64 = rng.random_range(0.5..2.0);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            }
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// Worst relative error of `case` over `trials` seeded draws.
///
/// Each trial contracts the op's output with a fixed random weight tensor,
/// so every output entry contributes to the checked scalar.
pub fn check_op(case: &OpCase, trials: u64, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial << 8));
        let inputs: Vec<Tensor> = case
            .shapes
            .iter()
            .map(|s| random_tensor(&mut rng, s, case.domain))
            .collect();
        let out_shape = {
            let g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            (case.f)(&g, &vars)?.shape()
        };
        let w = random_tensor(&mut rng, &out_shape, Domain::Any);
        let f = case.f;
        let report = gradcheck(
            move |g, xs| {
                let y = f(g, xs)?;
                Ok(y.mul(g.constant(w.clone()))?.sum())
            },
            &inputs,
            FD_STEP,
        )?;
        worst = worst.max(report.max_relative_error);
    }
    Ok(worst)
}
