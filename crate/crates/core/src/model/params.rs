use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Result, Scalar, Shape, Tensor, TensorError};

/// A named trainable tensor with its gradient and Adam moment slots.
#[derive(Debug, Clone)]
pub struct Param<T> {
    name: String,
    dims: Vec<usize>,
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Tensor<T>,
    pub(crate) m: Tensor<T>,
    pub(crate) v: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Logical dimensions: `[c_out, c_in, k, k]` for kernels, `[c_out]` for biases.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn first_moment(&self) -> &Tensor<T> {
        &self.m
    }

    pub fn second_moment(&self) -> &Tensor<T> {
        &self.v
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    fn is_weight(&self) -> bool {
        self.dims.len() == 4
    }
}

fn shape_of(dims: &[usize]) -> Shape {
    match *dims {
        [n, c, h, w] => Shape::new(n, c, h, w),
        [n] => Shape::new(n, 1, 1, 1),
        _ => unreachable!("parameters are rank 1 or rank 4"),
    }
}

/// Ordered parameter table. Order and names depend only on the network
/// configuration that registered them.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    grads_touched: bool,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            grads_touched: false,
        }
    }

    /// Adds a zero-filled parameter and returns its index.
    ///
    /// Panics on a duplicate name or a rank other than 1 or 4; both are
    /// construction bugs, not runtime conditions.
    pub fn register(&mut self, name: impl Into<String>, dims: &[usize]) -> usize {
        let name = name.into();
        assert!(
            dims.len() == 1 || dims.len() == 4,
            "parameter {name}: rank {} not supported",
            dims.len()
        );
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        let zeros = Tensor::zeros(shape_of(dims)).expect("parameter dimensions are nonzero");
        self.params.push(Param {
            name,
            dims: dims.to_vec(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros.clone(),
            value: zeros,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total element count over every parameter.
    pub fn numel(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.params[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.params[index].value
    }

    /// Overwrites a parameter's values; the length must match.
    pub fn set_values(&mut self, index: usize, values: &[T]) -> Result<()> {
        let p = &mut self.params[index];
        if values.len() != p.value.len() {
            return Err(TensorError::LengthMismatch {
                shape: p.value.shape(),
                len: values.len(),
                expected: p.value.len(),
            });
        }
        p.value.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn grad_mut(&mut self, index: usize) -> &mut Tensor<T> {
        self.grads_touched = true;
        &mut self.params[index].grad
    }

    pub(crate) fn accumulate_grad(&mut self, index: usize, g: &[T]) {
        self.grads_touched = true;
        let dst = self.params[index].grad.data_mut();
        debug_assert_eq!(dst.len(), g.len());
        for (d, &v) in dst.iter_mut().zip(g) {
            *d += v;
        }
    }

    /// Whether any gradient was written since construction or the last
    /// [`zero_grad`](Self::zero_grad).
    pub fn grads_populated(&self) -> bool {
        self.grads_touched
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::ZERO);
        }
        self.grads_touched = false;
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn reset_moments(&mut self) {
        for p in &mut self.params {
            p.m.fill(T::ZERO);
            p.v.fill(T::ZERO);
        }
    }

    /// He fan-in initialization.
    ///
    /// Kernels are drawn from `N(0, 2 / (k_h * k_w * c_in))`, biases are
    /// zero. Parameter `i` draws from a ChaCha8 stream keyed by `seed` with
    /// stream id `i`: ChaCha is a counter-mode generator, so each value is a
    /// pure function of `(seed, i, position)` on every platform. Gradients
    /// and moments are cleared.
    pub fn init_he(&mut self, seed: u64) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if p.is_weight() {
                let fan_in = (p.dims[1] * p.dims[2] * p.dims[3]) as f64;
                let std = (2.0 / fan_in).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                for v in p.value.data_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = T::from_f64(z * std);
                }
            } else {
                p.value.fill(T::ZERO);
            }
        }
        self.zero_grad();
        self.reset_moments();
    }

    /// Same table converted to another element type. Moments are carried over.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    m: p.m.cast(),
                    v: p.v.cast(),
                })
                .collect(),
            grads_touched: self.grads_touched,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values_and_zero_biases() {
        let build = || {
            let mut s = ParamStore::<f32>::new();
            s.register("a.weight", &[4, 3, 3, 3]);
            s.register("a.bias", &[4]);
            s.register("b.weight", &[2, 4, 1, 1]);
            s
        };
        let (mut a, mut b) = (build(), build());
        a.init_he(7);
        b.init_he(7);
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa.value().data(), pb.value().data());
        }
        assert!(a
            .by_name("a.bias")
            .unwrap()
            .value()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        b.init_he(8);
        assert_ne!(a.get(0).value().data(), b.get(0).value().data());
    }

    #[test]
    fn he_std_is_within_five_percent() {
        let mut s = ParamStore::<f64>::new();
        s.register("w", &[64, 64, 3, 3]);
        s.init_he(1);
        let d = s.get(0).value().data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let target = (2.0f64 / 576.0).sqrt();
        assert!((target - 0.0589).abs() < 1e-4);
        assert!(
            (var.sqrt() - target).abs() / target < 0.05,
            "std {}",
            var.sqrt()
        );
        assert!(mean.abs() < 0.05 * target);
    }

    #[test]
    fn grad_bookkeeping() {
        let mut s = ParamStore::<f32>::new();
        let i = s.register("w", &[1, 1, 1, 1]);
        assert!(!s.grads_populated());
        s.accumulate_grad(i, &[2.0]);
        s.accumulate_grad(i, &[2.0]);
        assert_eq!(s.get(i).grad().data(), &[4.0]);
        assert!(s.grads_populated());
        s.zero_grad();
        assert!(!s.grads_populated());
        assert_eq!(s.get(i).grad().data(), &[0.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_are_a_bug() {
        let mut s = ParamStore::<f32>::new();
        s.register("w", &[1]);
        s.register("w", &[1]);
    }
}
