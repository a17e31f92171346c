use drn_core::model::{Block, Drn, DrnConfig};
use drn_core::tensor::{self, Shape, Tensor};

fn config(scale: usize) -> DrnConfig {
    DrnConfig {
        scale,
        base_channels: 8,
        groups: 2,
        blocks_per_group: 2,
        rd_units_per_block: 3,
        distill_width: 3,
        ..DrnConfig::default()
    }
}

fn input(h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        ((x * 7 + y * 3 + c * 5) % 13) as f32 / 12.0
    })
    .unwrap()
}

fn zero_matching(model: &mut Drn<f32>, pred: impl Fn(&str) -> bool) {
    let names: Vec<String> = model
        .params()
        .names()
        .filter(|n| pred(n))
        .map(String::from)
        .collect();
    assert!(!names.is_empty());
    for n in names {
        let i = model.params().index_of(&n).unwrap();
        model.params_mut().value_mut(i).fill(0.0);
    }
}

#[test]
fn widths_grow_by_distill_after_every_unit() {
    for fusion in [true, false] {
        let cfg = DrnConfig {
            per_block_fusion: fusion,
            ..config(2)
        };
        let (c, d, l) = (cfg.base_channels, cfg.distill_width, cfg.rd_units_per_block);
        let model = Drn::<f32>::with_seed(cfg.clone(), 1).unwrap();
        let x = Tensor::<f32>::full(Shape::new(1, c, 5, 4), 0.1).unwrap();
        for group in model.groups() {
            let mut width = c;
            let mut feat = x.clone();
            for block in &group.blocks {
                let Block::Distill { units, fusion, .. } = block else {
                    panic!("distill block expected")
                };
                assert_eq!(units.len(), l);
                for unit in units {
                    let (y, _) = unit.forward(model.params(), &feat).unwrap();
                    assert_eq!(y.shape().c, width + d);
                    width += d;
                    feat = y;
                }
                if let Some(f) = fusion {
                    feat = tensor::elu_forward(
                        &f.forward(model.params(), &feat).unwrap(),
                        cfg.elu_alpha as f32,
                    );
                    width = c;
                }
                assert_eq!(feat.shape().c, width);
            }
            assert_eq!(group.compress.c_in, width);
            assert_eq!(group.compress.c_out, c);
        }
    }
}

#[test]
fn output_is_exactly_m_times_larger() {
    for m in [2, 3, 4] {
        let model = Drn::<f32>::with_seed(config(m), 2).unwrap();
        for (h, w) in [(5, 7), (1, 1), (6, 3)] {
            let y = model.infer(&input(h, w)).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 3, m * h, m * w));
        }
    }
}

#[test]
fn zeroed_group_body_is_identity() {
    let mut model = Drn::<f32>::with_seed(config(2), 3).unwrap();
    zero_matching(&mut model, |n| n.starts_with("g1.compress."));
    let x = Tensor::from_fn(Shape::new(2, 8, 4, 5), |n, c, y, x| {
        (n + c * 3 + y * 5 + x) as f32 * 0.01 - 0.2
    })
    .unwrap();
    let (y, _) = model.groups()[0].forward(model.params(), &x).unwrap();
    assert_eq!(y, x);
}

#[test]
fn zeroed_bodies_give_twice_the_shallow_feature() {
    let mut model = Drn::<f32>::with_seed(config(3), 4).unwrap();
    zero_matching(&mut model, |n| n.starts_with('g'));
    let x = input(6, 5);
    let y0 = model.lfe().forward(model.params(), &x).unwrap();
    let (_, trace) = model.forward(&x).unwrap();
    assert_eq!(trace.features(), &tensor::add(&y0, &y0).unwrap());
    assert!(y0.data().iter().any(|&v| v != 0.0));
}

#[test]
fn ablation_arm_keeps_the_interface() {
    let cfg = DrnConfig {
        ablate_rdb: true,
        ..config(2)
    };
    let model = Drn::<f32>::with_seed(cfg.clone(), 5).unwrap();
    assert!(model
        .groups()
        .iter()
        .flat_map(|g| &g.blocks)
        .all(|b| matches!(b, Block::Plain { .. })));
    assert!(!model.params().names().any(|n| n.contains(".u1.")));
    let y = model.infer(&input(4, 4)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 3, 8, 8));
}
