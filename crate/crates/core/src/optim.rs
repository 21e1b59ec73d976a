//! Composable gradient transformations.
//!
//! A transformation turns gradients into additive parameter updates and
//! threads an explicit state value through training. Nothing here mutates
//! parameters; callers apply updates with [`apply_updates`]. This is the
//! seam the sparsity wrapper in [`crate::engine`] interposes on.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tree::{check_same_topology, ParamTree};

/// Optimizer state: a step counter, named slot trees, and the states of any
/// nested transformations (one per chain link).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub slots: BTreeMap<String, ParamTree>,
    pub nested: Vec<OptState>,
}

impl OptState {
    pub fn with_step(step: u64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }
}

pub trait GradientTransformation {
    type State: Clone;

    fn init(&self, params: &ParamTree) -> Result<Self::State>;

    /// Maps `grads` to updates. Must be a pure function of its arguments.
    fn update(&self, grads: &ParamTree, state: &Self::State, params: &ParamTree) -> Result<(ParamTree, Self::State)>;
}

pub type BoxedTransformation = Box<dyn GradientTransformation<State = OptState> + Send + Sync>;

impl<T: GradientTransformation + ?Sized> GradientTransformation for Box<T> {
    type State = T::State;

    fn init(&self, params: &ParamTree) -> Result<Self::State> {
        (**self).init(params)
    }

    fn update(&self, grads: &ParamTree, state: &Self::State, params: &ParamTree) -> Result<(ParamTree, Self::State)> {
        (**self).update(grads, state, params)
    }
}

/// Passes gradients through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl GradientTransformation for Identity {
    type State = OptState;

    fn init(&self, _params: &ParamTree) -> Result<OptState> {
        Ok(OptState::default())
    }

    fn update(&self, grads: &ParamTree, state: &OptState, params: &ParamTree) -> Result<(ParamTree, OptState)> {
        check_same_topology(grads, params)?;
        Ok((grads.clone(), OptState::with_step(state.step + 1)))
    }
}

/// Multiplies gradients by a constant.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    factor: f64,
}

impl Scale {
    pub fn new(factor: f64) -> Result<Self> {
        if !factor.is_finite() {
            return Err(Error::Argument(format!("scale factor must be finite, got {factor}")));
        }
        Ok(Self { factor })
    }
}

impl GradientTransformation for Scale {
    type State = OptState;

    fn init(&self, _params: &ParamTree) -> Result<OptState> {
        Ok(OptState::default())
    }

    fn update(&self, grads: &ParamTree, state: &OptState, params: &ParamTree) -> Result<(ParamTree, OptState)> {
        check_same_topology(grads, params)?;
        let factor = self.factor;
        Ok((grads.map(|g| g.scale(factor)), OptState::with_step(state.step + 1)))
    }
}

/// Plain gradient descent: `update = -learning_rate * grad`.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    learning_rate: f64,
}

impl GradientTransformation for Sgd {
    type State = OptState;

    fn init(&self, _params: &ParamTree) -> Result<OptState> {
        Ok(OptState::default())
    }

    fn update(&self, grads: &ParamTree, state: &OptState, params: &ParamTree) -> Result<(ParamTree, OptState)> {
        check_same_topology(grads, params)?;
        let neg_lr = -self.learning_rate;
        Ok((grads.map(|g| g.scale(neg_lr)), OptState::with_step(state.step + 1)))
    }
}

/// Bias-corrected Adam. First and second moments live in the `adam_m` and
/// `adam_v` slots.
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

pub const ADAM_M: &str = "adam_m";
pub const ADAM_V: &str = "adam_v";

impl Adam {
    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        check_learning_rate(learning_rate)?;
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Argument(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        })
    }
}

impl GradientTransformation for Adam {
    type State = OptState;

    fn init(&self, params: &ParamTree) -> Result<OptState> {
        let mut state = OptState::default();
        state.slots.insert(ADAM_M.into(), params.zeros_like());
        state.slots.insert(ADAM_V.into(), params.zeros_like());
        Ok(state)
    }

    fn update(&self, grads: &ParamTree, state: &OptState, params: &ParamTree) -> Result<(ParamTree, OptState)> {
        check_same_topology(grads, params)?;
        let slot = |name: &str| {
            state
                .slots
                .get(name)
                .ok_or_else(|| Error::Argument(format!("adam state is missing slot `{name}`")))
        };
        let (m, v) = (slot(ADAM_M)?, slot(ADAM_V)?);
        check_same_topology(m, params)?;
        check_same_topology(v, params)?;

        let (b1, b2) = (self.beta1, self.beta2);
        let m = m.zip_map(grads, |m, g| b1 * m + (1.0 - b1) * g)?;
        let v = v.zip_map(grads, |v, g| b2 * v + (1.0 - b2) * g * g)?;

        let t = (state.step + 1) as f64;
        let correction1 = 1.0 - b1.powf(t);
        let correction2 = 1.0 - b2.powf(t);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let updates = m.zip_map(&v, |m, v| {
            let m_hat = m / correction1;
            let v_hat = v / correction2;
            -lr * m_hat / (v_hat.sqrt() + eps)
        })?;

        let mut next = OptState::with_step(state.step + 1);
        next.slots.insert(ADAM_M.into(), m);
        next.slots.insert(ADAM_V.into(), v);
        Ok((updates, next))
    }
}

/// Pipes updates through each link in order. Link states are kept in
/// `OptState::nested`, in the same order.
pub struct Chain {
    links: Vec<BoxedTransformation>,
}

impl GradientTransformation for Chain {
    type State = OptState;

    fn init(&self, params: &ParamTree) -> Result<OptState> {
        let nested = self.links.iter().map(|t| t.init(params)).collect::<Result<Vec<_>>>()?;
        Ok(OptState {
            nested,
            ..OptState::default()
        })
    }

    fn update(&self, grads: &ParamTree, state: &OptState, params: &ParamTree) -> Result<(ParamTree, OptState)> {
        if state.nested.len() != self.links.len() {
            return Err(Error::Argument(format!(
                "chain of {} links given {} nested states",
                self.links.len(),
                state.nested.len()
            )));
        }
        let mut updates = grads.clone();
        let mut nested = Vec::with_capacity(self.links.len());
        for (link, link_state) in self.links.iter().zip(&state.nested) {
            let (u, s) = link.update(&updates, link_state, params)?;
            updates = u;
            nested.push(s);
        }
        Ok((
            updates,
            OptState {
                step: state.step + 1,
                slots: BTreeMap::new(),
                nested,
            },
        ))
    }
}

fn check_learning_rate(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("learning rate must be positive, got {lr}")))
    }
}

pub fn identity() -> Identity {
    Identity
}

pub fn scale(factor: f64) -> Result<Scale> {
    Scale::new(factor)
}

pub fn sgd(learning_rate: f64) -> Result<Sgd> {
    check_learning_rate(learning_rate)?;
    Ok(Sgd { learning_rate })
}

/// Adam with the usual defaults (0.9, 0.999, 1e-8).
pub fn adam(learning_rate: f64) -> Result<Adam> {
    Adam::with_betas(learning_rate, 0.9, 0.999, 1e-8)
}

pub fn chain(links: Vec<BoxedTransformation>) -> Result<Chain> {
    if links.is_empty() {
        return Err(Error::Argument("chain needs at least one transformation".into()));
    }
    Ok(Chain { links })
}

/// `params + updates`, elementwise.
pub fn apply_updates(params: &ParamTree, updates: &ParamTree) -> Result<ParamTree> {
    params.zip_map(updates, |p, u| p + u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tree(v: &[f64]) -> ParamTree {
        ParamTree::new().with("w", Tensor::from_vec(v.to_vec()))
    }

    fn run<T: GradientTransformation>(tx: &T, p0: &ParamTree, grads: &[ParamTree]) -> Vec<ParamTree> {
        let mut state = tx.init(p0).unwrap();
        let mut params = p0.clone();
        let mut out = Vec::new();
        for g in grads {
            let (u, s) = tx.update(g, &state, &params).unwrap();
            params = apply_updates(&params, &u).unwrap();
            state = s;
            out.push(params.clone());
        }
        out
    }

    fn gradient_sequence(n: usize) -> Vec<ParamTree> {
        (0..n)
            .map(|i| tree(&[(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos() - 0.2]))
            .collect()
    }

    #[test]
    fn sgd_examples() {
        let tx = sgd(0.1).unwrap();
        let p = tree(&[1.0]);
        let s0 = tx.init(&p).unwrap();
        let (u, s1) = tx.update(&tree(&[2.0]), &s0, &p).unwrap();
        assert_eq!(u.get("w").unwrap().data(), &[-0.2]);
        let (u0, _) = tx.update(&tree(&[0.0]), &s0, &p).unwrap();
        assert!(u0.get("w").unwrap().data().iter().all(|&x| x == 0.0));
        let (u2, s2) = tx.update(&tree(&[2.0]), &s1, &p).unwrap();
        assert_eq!(u, u2);
        assert_eq!((s0.step, s1.step, s2.step), (0, 1, 2));
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(sgd(0.0).is_err());
        assert!(sgd(-1.0).is_err());
        assert!(Adam::with_betas(0.1, 1.0, 0.999, 1e-8).is_err());
        assert!(Adam::with_betas(0.1, 0.9, -0.1, 1e-8).is_err());
        assert!(Adam::with_betas(0.1, 0.9, 0.999, 0.0).is_err());
        assert!(chain(vec![]).is_err());
    }

    #[test]
    fn adam_first_step() {
        let tx = adam(0.1).unwrap();
        let p = tree(&[0.0, 0.0, 0.0]);
        let s = tx.init(&p).unwrap();
        let (u, _) = tx.update(&tree(&[1.0, -3.0, 1e-3]), &s, &p).unwrap();
        let u = u.get("w").unwrap().data();
        // Bias correction at t=1 cancels: update = -lr * g / (|g| + eps).
        assert!((u[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!(u[1] > 0.0 && u[2] < 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let tx = adam(0.05).unwrap();
        let p0 = tree(&[0.7, -1.1]);
        let traj = run(&tx, &p0, &vec![tree(&[0.0, 0.0]); 50]);
        assert!(traj.iter().all(|p| p == &p0));
    }

    #[test]
    fn chain_equivalences() {
        let p0 = tree(&[0.5, -0.5]);
        let grads = gradient_sequence(20);
        let plain = run(&sgd(0.1).unwrap(), &p0, &grads);

        let single = chain(vec![Box::new(sgd(0.1).unwrap())]).unwrap();
        assert_eq!(run(&single, &p0, &grads), plain);

        let with_identity = chain(vec![Box::new(identity()), Box::new(sgd(0.1).unwrap())]).unwrap();
        assert_eq!(run(&with_identity, &p0, &grads), plain);

        let halves = chain(vec![Box::new(scale(0.5).unwrap()), Box::new(scale(0.5).unwrap())]).unwrap();
        assert_eq!(run(&halves, &p0, &grads), run(&scale(0.25).unwrap(), &p0, &grads));
    }

    #[test]
    fn chain_nests_states_in_order() {
        let tx = chain(vec![Box::new(scale(2.0).unwrap()), Box::new(adam(0.1).unwrap())]).unwrap();
        let p = tree(&[1.0]);
        let s = tx.init(&p).unwrap();
        assert_eq!(s.nested.len(), 2);
        assert!(s.nested[0].slots.is_empty());
        assert!(s.nested[1].slots.contains_key(ADAM_M));
        let (_, s1) = tx.update(&tree(&[1.0]), &s, &p).unwrap();
        assert_eq!(s1.step, 1);
        assert_eq!(s1.nested[1].step, 1);
        // adam saw the scaled gradient
        assert_eq!(
            s1.nested[1].slots[ADAM_M].get("w").unwrap().data(),
            &[(1.0 - 0.9) * 2.0]
        );
    }

    #[test]
    fn apply_updates_examples() {
        let p = tree(&[1.0, 2.0]);
        assert_eq!(apply_updates(&p, &tree(&[0.0, 0.0])).unwrap(), p);
        assert_eq!(apply_updates(&p, &tree(&[-1.0, -2.0])).unwrap(), tree(&[0.0, 0.0]));
        assert_eq!(apply_updates(&tree(&[1.0]), &tree(&[0.5])).unwrap(), tree(&[1.5]));
        let other = ParamTree::new().with("v", Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(apply_updates(&p, &other), Err(Error::Structural { .. })));
    }

    #[test]
    fn replay_is_bit_identical() {
        let p0 = ParamTree::new()
            .with("a", Tensor::from_vec(vec![0.3, -0.2, 0.9]))
            .with("b", Tensor::from_vec(vec![1.0]));
        let grads: Vec<ParamTree> = (0..30)
            .map(|i| {
                let x = i as f64;
                ParamTree::new()
                    .with("a", Tensor::from_vec(vec![x.sin(), x.cos(), (0.5 * x).sin()]))
                    .with("b", Tensor::from_vec(vec![0.1 * x]))
            })
            .collect();
        let tx = adam(0.01).unwrap();
        assert_eq!(run(&tx, &p0, &grads), run(&tx, &p0, &grads));
        let mut state = tx.init(&p0).unwrap();
        let mut params = p0.clone();
        for g in &grads {
            let (u, s) = tx.update(g, &state, &params).unwrap();
            params = apply_updates(&params, &u).unwrap();
            state = s;
            for slot in state.slots.values() {
                check_same_topology(slot, &p0).unwrap();
            }
        }
    }
}
