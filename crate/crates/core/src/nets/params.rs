use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{NetworkSpec, Role};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// Weight and bias of one layer. Parameterless layers hold empty tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-layer tensors shaped like a network's parameters. Used for the
/// parameters themselves, their gradients and optimizer velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
}

impl ParamSet {
    pub fn zeros_like(spec: &NetworkSpec) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_shapes();
                LayerParams { weight: Tensor::zeros(w), bias: Tensor::zeros(b) }
            })
            .collect();
        ParamSet { layers }
    }

    /// All values flattened: per layer, weight then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for l in &self.layers {
            v.extend_from_slice(l.weight.data());
            v.extend_from_slice(l.bias.data());
        }
        v
    }

    /// Overwrite all values from a flat slice in [`ParamSet::flatten`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape { expected: vec![self.len()], got: vec![flat.len()] });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter value".into()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for t in [&mut l.weight, &mut l.bias] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += y;
            }
            for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += y;
            }
        }
    }

    /// Iterate mutable `(value, other)` pairs across all tensors.
    pub fn zip_mut<'a>(
        &'a mut self,
        other: &'a ParamSet,
    ) -> impl Iterator<Item = (&'a mut f64, &'a f64)> + 'a {
        self.layers.iter_mut().zip(&other.layers).flat_map(|(a, b)| {
            a.weight
                .data_mut()
                .iter_mut()
                .zip(b.weight.data())
                .chain(a.bias.data_mut().iter_mut().zip(b.bias.data()))
        })
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()))
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.data().iter().chain(l.bias.data()).all(|v| v.is_finite()))
    }
}

/// Parameters of one network bound to its architecture and role.
///
/// Every mutation through [`NetworkParams::values_mut`] gives the params a
/// fresh revision so forward traces taken earlier are detected as stale.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    spec: NetworkSpec,
    role: Role,
    params: ParamSet,
    revision: u64,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.role == other.role && self.params == other.params
    }
}

impl NetworkParams {
    pub fn from_parts(spec: NetworkSpec, role: Role, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        if params.layers.len() != spec.layers.len() {
            return Err(Error::Spec(format!(
                "{} parameter layers for {} spec layers",
                params.layers.len(),
                spec.layers.len()
            )));
        }
        for (l, p) in spec.layers.iter().zip(&params.layers) {
            let (w, b) = l.param_shapes();
            p.weight.ensure_shape(&w)?;
            p.bias.ensure_shape(&b)?;
        }
        Ok(NetworkParams { spec, role, params, revision: fresh_revision() })
    }

    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with fan-in `n` is drawn from `U(-1/sqrt(n), 1/sqrt(n))`.
    pub fn init(spec: &NetworkSpec, role: Role, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros_like(spec);
        for (l, p) in spec.layers.iter().zip(&mut params.layers) {
            if !l.has_params() {
                continue;
            }
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut().iter_mut()) {
                *v = rng.random_range(-bound..bound);
            }
        }
        NetworkParams::from_parts(spec.clone(), role, params)
    }

    pub fn zeros(spec: &NetworkSpec, role: Role) -> Result<Self> {
        NetworkParams::from_parts(spec.clone(), role, ParamSet::zeros_like(spec))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Mutable access to the parameter tensors; bumps the revision.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.revision = fresh_revision();
        &mut self.params
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.params_mut().values_mut()
    }

    pub fn expect_role(&self, role: Role) -> Result<()> {
        if self.role != role {
            return Err(Error::Role { found: self.role.to_string(), expected: role.to_string() });
        }
        Ok(())
    }

    /// Fingerprint of spec, role and every parameter bit.
    pub fn content_fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.spec.fingerprint().to_le_bytes());
        h.update([self.role.tag()]);
        for v in self.params.flatten() {
            h.update(v.to_bits().to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}
