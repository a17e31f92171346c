use crate::model::{Drn, ModelError};
use crate::tensor::{dihedral, dihedral_inverse, Scalar, Tensor};

/// Averages `f` over the eight dihedral transforms of `x`, each output
/// mapped back through the inverse transform.
///
/// Branches are summed as a balanced tree, `((0+1)+(2+3))+((4+5)+(6+7))`,
/// and divided by 8 in the storage precision: eight equal branches
/// reproduce that value exactly.
pub fn self_ensemble_with<T: Scalar, E>(
    x: &Tensor<T>,
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>, E>,
) -> Result<Tensor<T>, E>
where
    E: From<crate::tensor::TensorError>,
{
    let mut branches = Vec::with_capacity(8);
    for t in 0..8 {
        let y = f(&dihedral(x, t)?)?;
        branches.push(dihedral_inverse(&y, t)?);
    }
    let shape = branches[0].shape();
    for b in &branches[1..] {
        shape.expect_eq(&b.shape(), "self_ensemble")?;
    }
    let eighth = T::from_f64(0.125);
    let data = (0..branches[0].len())
        .map(|i| {
            let v = |k: usize| branches[k].data()[i];
            (((v(0) + v(1)) + (v(2) + v(3))) + ((v(4) + v(5)) + (v(6) + v(7)))) * eighth
        })
        .collect();
    Ok(Tensor::from_vec(shape, data)?)
}

/// Eight-way geometric self-ensemble of a DRN forward pass.
pub fn self_ensemble<T: Scalar>(model: &Drn<T>, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    self_ensemble_with(x, |t| model.infer(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DrnConfig;
    use crate::tensor::{Shape, TensorError};

    fn input() -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 3, 5, 7), |_, c, y, x| {
            ((x * 3 + y * 5 + c) % 11) as f32 / 10.0
        })
        .unwrap()
    }

    /// Nearest-neighbour x2 replication commutes with every dihedral map.
    fn replicate(x: &Tensor<f32>) -> Result<Tensor<f32>, TensorError> {
        let s = x.shape();
        Tensor::from_fn(Shape::new(s.n, s.c, 2 * s.h, 2 * s.w), |n, c, y, xx| {
            x.at(n, c, y / 2, xx / 2)
        })
    }

    #[test]
    fn constant_model_is_a_fixed_point() {
        let c = 0.1f32;
        let f = |t: &Tensor<f32>| {
            let s = t.shape();
            Tensor::full(Shape::new(s.n, 3, 2 * s.h, 2 * s.w), c)
        };
        let x = input();
        let out = self_ensemble_with(&x, f).unwrap();
        assert_eq!(out.data(), f(&x).unwrap().data());
    }

    #[test]
    fn equivariant_model_is_a_fixed_point() {
        let x = input();
        let out = self_ensemble_with(&x, replicate).unwrap();
        assert_eq!(out.data(), replicate(&x).unwrap().data());
    }

    #[test]
    fn branch_order_does_not_matter() {
        let model = Drn::<f32>::with_seed(
            DrnConfig {
                scale: 2,
                base_channels: 4,
                groups: 1,
                blocks_per_group: 1,
                rd_units_per_block: 1,
                distill_width: 2,
                ..DrnConfig::default()
            },
            5,
        )
        .unwrap();
        let x = input();
        let out = self_ensemble(&model, &x).unwrap();
        let single = model.infer(&x).unwrap();
        assert!(
            out.max_abs_diff(&single).unwrap() > 1e-4,
            "ensemble must differ on a generic model"
        );
        // f64 mean of the branches in reverse order; the f32 tree sum of
        // eight terms rounds at most 3 levels deep plus once for the 1/8.
        let branches: Vec<Tensor<f32>> = (0..8)
            .rev()
            .map(|t| dihedral_inverse(&model.infer(&dihedral(&x, t).unwrap()).unwrap(), t).unwrap())
            .collect();
        let peak = branches
            .iter()
            .flat_map(|b| b.data())
            .fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
        let bound = 2.0 * f64::from(f32::EPSILON) * peak;
        for (i, &v) in out.data().iter().enumerate() {
            let mean = branches.iter().map(|b| f64::from(b.data()[i])).sum::<f64>() / 8.0;
            assert!(
                (f64::from(v) - mean).abs() <= bound,
                "element {i}: {v} vs {mean}"
            );
        }
    }
}
