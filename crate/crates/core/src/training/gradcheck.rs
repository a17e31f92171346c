//! Central finite-difference checks of every analytic backward pass, in
//! double precision.
//!
//! Each check draws random inputs and parameters, projects the output onto
//! a random weight tensor `w` to get a scalar, and compares the analytic
//! gradient of `sum(w * f(x))` against `sum(w * (f(x + h) - f(x - h))) / 2h`
//! for every element of every variable. The per-element error is
//! `|a - n| / max(|a|, |n|, FLOOR_FRACTION * max_j |n_j|, MIN_FLOOR)`, the
//! max running over the same variable: entries far below the variable's
//! gradient scale are compared at that scale, where the finite-difference
//! rounding noise (about `1e-8` for the full model) no longer dominates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Block, ConvLayer, Drn, DrnConfig, Group, ParamStore, RdUnit};
use crate::tensor::{self, ConvSpec, Shape, Tensor};

pub const STEP: f64 = 1e-6;
pub const FLOOR_FRACTION: f64 = 1e-3;
pub const MIN_FLOOR: f64 = 1e-12;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

const ALPHA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Number of gradient elements compared.
    pub elements: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub checks: Vec<GradCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(GradCheck::passed)
    }

    pub fn get(&self, name: &str) -> Option<&GradCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<16} {:>10} {:>12} {:>10}  result",
            "check", "elements", "max_rel_err", "tolerance"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<16} {:>10} {:>12.3e} {:>10.0e}  {}",
                c.name,
                c.elements,
                c.max_rel_error,
                c.tolerance,
                if c.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

type Forward<'a> = Box<dyn Fn(&[Tensor<f64>]) -> Tensor<f64> + 'a>;
type Backward<'a> = Box<dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Vec<Tensor<f64>> + 'a>;

struct Problem<'a> {
    name: &'static str,
    tolerance: f64,
    vars: Vec<Tensor<f64>>,
    forward: Forward<'a>,
    backward: Backward<'a>,
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi)).expect("nonzero shape")
}

/// Values in `[-2, 2]` kept at least `0.05` away from the ELU kink.
fn away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = rng.random_range(0.05..2.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
    .expect("nonzero shape")
}

fn bias_shape(c: usize) -> Shape {
    Shape::new(c, 1, 1, 1)
}

fn run(problem: Problem<'_>, rng: &mut ChaCha8Rng, tamper: bool) -> GradCheck {
    let Problem {
        name,
        tolerance,
        mut vars,
        forward,
        backward,
    } = problem;
    let out = forward(&vars);
    let w = uniform(out.shape(), rng, -1.0, 1.0);
    let mut analytic = backward(&vars, &w);
    assert_eq!(
        analytic.len(),
        vars.len(),
        "{name}: one gradient per variable"
    );
    if tamper {
        // Largest element of the first parameter gradient (or of the input
        // gradient when there are no parameters), scaled by 1.1.
        let k = if analytic.len() > 1 { 1 } else { 0 };
        let g = analytic[k].data_mut();
        let i = (0..g.len())
            .max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()))
            .expect("gradient is nonempty");
        g[i] *= 1.1;
    }

    let mut worst = 0.0f64;
    let mut elements = 0;
    for k in 0..vars.len() {
        let mut numeric = Vec::with_capacity(vars[k].len());
        for i in 0..vars[k].len() {
            let orig = vars[k].data()[i];
            vars[k].data_mut()[i] = orig + STEP;
            let plus = forward(&vars);
            vars[k].data_mut()[i] = orig - STEP;
            let minus = forward(&vars);
            vars[k].data_mut()[i] = orig;
            let diff: f64 = plus
                .data()
                .iter()
                .zip(minus.data())
                .zip(w.data())
                .map(|((p, m), w)| w * (p - m))
                .sum();
            numeric.push(diff / (2.0 * STEP));
        }
        let scale = numeric.iter().fold(0.0f64, |m, n| m.max(n.abs()));
        let floor = (FLOOR_FRACTION * scale).max(MIN_FLOOR);
        for (a, n) in analytic[k].data().iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
            elements += 1;
        }
    }
    GradCheck {
        name: name.to_owned(),
        max_rel_error: worst,
        tolerance,
        elements,
    }
}

fn conv_problem<'a>(name: &'static str, kernel: usize, rng: &mut ChaCha8Rng) -> Problem<'a> {
    let spec = ConvSpec::for_kernel(kernel).expect("odd kernel");
    let (ci, co) = (3, 4);
    Problem {
        name,
        tolerance: PRIMITIVE_TOLERANCE,
        vars: vec![
            uniform(Shape::new(2, ci, 5, 6), rng, -1.0, 1.0),
            uniform(Shape::new(co, ci, kernel, kernel), rng, -1.0, 1.0),
            uniform(bias_shape(co), rng, -1.0, 1.0),
        ],
        forward: Box::new(move |v| {
            tensor::conv2d_forward(&v[0], &v[1], v[2].data(), spec).unwrap()
        }),
        backward: Box::new(move |v, g| {
            let grads = tensor::conv2d_backward(g, &v[0], &v[1], spec).unwrap();
            vec![
                grads.input,
                grads.weight,
                Tensor::from_vec(bias_shape(co), grads.bias).unwrap(),
            ]
        }),
    }
}

/// Variables are the input followed by every parameter of `store`.
fn store_vars(x: Tensor<f64>, store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    std::iter::once(x)
        .chain(store.iter().map(|p| p.value().clone()))
        .collect()
}

fn with_values(template: &ParamStore<f64>, vars: &[Tensor<f64>]) -> ParamStore<f64> {
    let mut s = template.clone();
    for (i, v) in vars[1..].iter().enumerate() {
        s.set_values(i, v.data()).unwrap();
    }
    s.zero_grad();
    s
}

fn store_grads(gx: Tensor<f64>, store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    std::iter::once(gx)
        .chain(store.iter().map(|p| p.grad().clone()))
        .collect()
}

/// He-initialized kernels with small random biases.
fn init_store(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    store.init_he(rng.random());
    for i in 0..store.len() {
        if store.get(i).dims().len() == 1 {
            let n = store.get(i).numel();
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            store.set_values(i, &vals).unwrap();
        }
    }
}

fn primitive_problems<'a>(rng: &mut ChaCha8Rng) -> Vec<Problem<'a>> {
    let mut out = vec![
        conv_problem("conv3x3", 3, rng),
        conv_problem("conv1x1", 1, rng),
    ];
    let alpha = ALPHA;
    out.push(Problem {
        name: "elu",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: vec![away_from_zero(Shape::new(2, 3, 4, 4), rng)],
        forward: Box::new(move |v| tensor::elu_forward(&v[0], alpha)),
        backward: Box::new(move |v, g| vec![tensor::elu_backward(g, &v[0], alpha).unwrap()]),
    });
    out.push(Problem {
        name: "pixel-shuffle",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: vec![uniform(Shape::new(1, 8, 3, 2), rng, -1.0, 1.0)],
        forward: Box::new(|v| tensor::pixel_shuffle(&v[0], 2).unwrap()),
        backward: Box::new(|_, g| vec![tensor::pixel_shuffle_backward(g, 2).unwrap()]),
    });
    out.push(Problem {
        name: "pixel-unshuffle",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: vec![uniform(Shape::new(1, 2, 6, 3), rng, -1.0, 1.0)],
        forward: Box::new(|v| tensor::pixel_unshuffle(&v[0], 3).unwrap()),
        backward: Box::new(|_, g| vec![tensor::pixel_unshuffle_backward(g, 3).unwrap()]),
    });
    out.push(Problem {
        name: "concat",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: vec![
            uniform(Shape::new(2, 3, 3, 3), rng, -1.0, 1.0),
            uniform(Shape::new(2, 2, 3, 3), rng, -1.0, 1.0),
        ],
        forward: Box::new(|v| tensor::concat_channels(&v[0], &v[1]).unwrap()),
        backward: Box::new(|_, g| {
            let (a, b) = tensor::concat_channels_backward(g, 3).unwrap();
            vec![a, b]
        }),
    });
    // Output is the two halves in swapped order so the check sees a
    // non-identity map through the split.
    out.push(Problem {
        name: "split",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: vec![uniform(Shape::new(2, 5, 3, 3), rng, -1.0, 1.0)],
        forward: Box::new(|v| {
            let (a, b) = tensor::split_channels(&v[0], 2).unwrap();
            tensor::concat_channels(&b, &a).unwrap()
        }),
        backward: Box::new(|_, g| {
            let (gb, ga) = tensor::concat_channels_backward(g, 3).unwrap();
            vec![tensor::split_channels_backward(&ga, &gb).unwrap()]
        }),
    });
    out.push(Problem {
        name: "add",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: vec![
            uniform(Shape::new(1, 3, 4, 4), rng, -1.0, 1.0),
            uniform(Shape::new(1, 3, 4, 4), rng, -1.0, 1.0),
        ],
        forward: Box::new(|v| tensor::add(&v[0], &v[1]).unwrap()),
        backward: Box::new(|_, g| {
            let (a, b) = tensor::add_backward(g);
            vec![a, b]
        }),
    });
    out
}

fn block_problems<'a>(rng: &mut ChaCha8Rng) -> Vec<Problem<'a>> {
    let (c, d) = (4, 2);
    let x_shape = Shape::new(1, c, 5, 5);
    let mut out = Vec::new();

    let mut store = ParamStore::<f64>::new();
    let unit = RdUnit::register(&mut store, "u", c, c, d, ALPHA);
    init_store(&mut store, rng);
    let x = uniform(x_shape, rng, -1.0, 1.0);
    let (u1, u2) = (unit.clone(), unit);
    let (t1, t2) = (store.clone(), store.clone());
    out.push(Problem {
        name: "rd-unit",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: store_vars(x, &store),
        forward: Box::new(move |v| u1.forward(&with_values(&t1, v), &v[0]).unwrap().0),
        backward: Box::new(move |v, g| {
            let mut s = with_values(&t2, v);
            let (_, trace) = u2.forward(&s, &v[0]).unwrap();
            let gx = u2.backward(&mut s, &trace, g).unwrap();
            store_grads(gx, &s)
        }),
    });

    for (name, plain) in [("rdb", false), ("plain-block", true)] {
        let mut store = ParamStore::<f64>::new();
        let block = if plain {
            Block::register_plain(&mut store, "b", c, 2, ALPHA)
        } else {
            Block::register_distill(&mut store, "b", c, c, 2, d, true, ALPHA)
        };
        init_store(&mut store, rng);
        let x = uniform(x_shape, rng, -1.0, 1.0);
        let (b1, b2) = (block.clone(), block);
        let (t1, t2) = (store.clone(), store.clone());
        out.push(Problem {
            name,
            tolerance: PRIMITIVE_TOLERANCE,
            vars: store_vars(x, &store),
            forward: Box::new(move |v| b1.forward(&with_values(&t1, v), &v[0]).unwrap().0),
            backward: Box::new(move |v, g| {
                let mut s = with_values(&t2, v);
                let (_, trace) = b2.forward(&s, &v[0]).unwrap();
                let gx = b2.backward(&mut s, &trace, g).unwrap();
                store_grads(gx, &s)
            }),
        });
    }

    let mut store = ParamStore::<f64>::new();
    let blocks = (1..=2)
        .map(|k| Block::register_distill(&mut store, &format!("g.b{k}"), c, c, 1, d, true, ALPHA))
        .collect();
    let compress = ConvLayer::register(&mut store, "g.compress", c, c, ConvSpec::POINTWISE);
    let group = Group::new(blocks, compress, c, ALPHA);
    init_store(&mut store, rng);
    let x = uniform(x_shape, rng, -1.0, 1.0);
    let (g1, g2) = (group.clone(), group);
    let (t1, t2) = (store.clone(), store.clone());
    out.push(Problem {
        name: "rdg",
        tolerance: PRIMITIVE_TOLERANCE,
        vars: store_vars(x, &store),
        forward: Box::new(move |v| g1.forward(&with_values(&t1, v), &v[0]).unwrap().0),
        backward: Box::new(move |v, g| {
            let mut s = with_values(&t2, v);
            let (_, trace) = g2.forward(&s, &v[0]).unwrap();
            let gx = g2.backward(&mut s, &trace, g).unwrap();
            store_grads(gx, &s)
        }),
    });
    out
}

/// The reference tiny network: `M=2, C=8, G=1, K=1, L=1, d=2`.
pub fn full_model_config() -> DrnConfig {
    DrnConfig {
        scale: 2,
        base_channels: 8,
        groups: 1,
        blocks_per_group: 1,
        rd_units_per_block: 1,
        distill_width: 2,
        ..DrnConfig::default()
    }
}

fn model_problem<'a>(rng: &mut ChaCha8Rng) -> Problem<'a> {
    let mut model = Drn::<f64>::new(full_model_config()).expect("valid config");
    init_store(model.params_mut(), rng);
    let x = uniform(Shape::new(1, 3, 6, 6), rng, 0.0, 1.0);
    let vars = store_vars(x, model.params());
    let m2 = model.clone();
    Problem {
        name: "full-model",
        tolerance: MODEL_TOLERANCE,
        vars,
        forward: Box::new(move |v| {
            let mut m = model.clone();
            *m.params_mut() = with_values(model.params(), v);
            m.infer(&v[0]).unwrap()
        }),
        backward: Box::new(move |v, g| {
            let mut m = m2.clone();
            *m.params_mut() = with_values(m2.params(), v);
            let (_, trace) = m.forward(&v[0]).unwrap();
            let gx = m.backward_with(&trace, g).unwrap();
            store_grads(gx, m.params())
        }),
    }
}

/// Runs every check with the given seed.
pub fn grad_check_suite(seed: u64) -> GradCheckReport {
    grad_check_suite_with(seed, false)
}

/// Like [`grad_check_suite`]; with `tamper`, the largest element of one
/// analytic weight gradient in every check is inflated by 10% before the
/// comparison, which must make the suite fail.
pub fn grad_check_suite_with(seed: u64, tamper: bool) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = primitive_problems(&mut rng);
    problems.extend(block_problems(&mut rng));
    problems.push(model_problem(&mut rng));
    let checks = problems
        .into_iter()
        .map(|p| run(p, &mut rng, tamper))
        .collect();
    GradCheckReport { seed, checks }
}
