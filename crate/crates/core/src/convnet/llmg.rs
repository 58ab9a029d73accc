//! The LLMG sweep on per-level channel groups.
//!
//! Each level holds four seven-channel translation stacks (`v` for the
//! coefficients, `utilde`, `ubar`, and scratch `z`) over its closure, six
//! `Upsilon` channels and the load. Flattened in that order this is the
//! `4 * 7 + 7` channel layout of one level.

use ndarray::{Array3, Axis};

use super::bank::StencilBank;
use super::ops::{channel, conv_apply_a, conv_apply_a_transpose, conv_prolongate, conv_restrict, conv_translate};
use crate::error::{Error, Result};
use crate::field::{ActiveSet, Image, MultilevelField};

pub const STACK_CHANNELS: usize = 7;
pub const LEVEL_CHANNELS: usize = 4 * STACK_CHANNELS + 6 + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLevelState {
    pub v: Array3<f64>,
    pub utilde: Array3<f64>,
    pub ubar: Array3<f64>,
    pub z: Array3<f64>,
    pub upsilon: Array3<f64>,
    pub f: Image,
}

#[derive(Clone, Debug)]
pub struct ConvLlmgState {
    pub masks: ActiveSet,
    pub omegas: Vec<f64>,
    pub levels: Vec<ConvLevelState>,
}

fn stack(bank: &StencilBank, masks: &ActiveSet, k: usize, img: &Image) -> Result<Array3<f64>> {
    conv_translate(bank, img, masks.closure(k), masks.closure(k))
}

impl ConvLlmgState {
    /// Input layer: coefficient stacks, the coarse-level contributions
    /// `utilde` by repeated prolongation, zero `ubar` and scratch.
    pub fn new(
        bank: &StencilBank,
        u: &MultilevelField,
        f: &MultilevelField,
        upsilon: &[Array3<f64>],
        omegas: &[f64],
    ) -> Result<Self> {
        let masks = u.masks().clone();
        let levels = u.levels();
        if f.masks() != &masks || upsilon.len() != levels || omegas.len() != levels || bank.levels() != levels {
            return Err(Error::Shape("inconsistent conv solver state".into()));
        }
        let mut out = Vec::with_capacity(levels);
        let mut ut = Image::zeros(u.level(0).dim());
        for k in 0..levels {
            if k > 0 {
                let prev = &ut + u.level(k - 1);
                ut = conv_prolongate(bank, &prev, masks.closure(k - 1), masks.closure(k))?;
            }
            let n = masks.hierarchy().n(k);
            out.push(ConvLevelState {
                v: stack(bank, &masks, k, u.level(k))?,
                utilde: stack(bank, &masks, k, &ut)?,
                ubar: Array3::zeros((STACK_CHANNELS, n, n)),
                z: Array3::zeros((STACK_CHANNELS, n, n)),
                upsilon: upsilon[k].clone(),
                f: f.level(k).clone(),
            });
        }
        Ok(Self { masks, omegas: omegas.to_vec(), levels: out })
    }

    /// Output layer: channel 0 of every `v` stack.
    pub fn solution(&self) -> Result<MultilevelField> {
        MultilevelField::from_images_masked(&self.masks, self.levels.iter().map(|l| channel(&l.v, 0)).collect())
    }

    /// Channel count of the flattened state over all levels.
    pub fn channels(&self) -> usize {
        LEVEL_CHANNELS * self.levels.len()
    }
}

fn smooth(bank: &StencilBank, st: &mut ConvLlmgState, k: usize) -> Result<()> {
    let masks = &st.masks;
    if masks.level_dofs(k) == 0 {
        return Ok(());
    }
    let active = masks.active(k);
    let lvl = &st.levels[k];
    let sum = &lvl.v + &lvl.utilde;
    let au = conv_apply_a(bank, k, &sum, &lvl.upsilon, active)?;
    let ubar = lvl.ubar.index_axis(Axis(0), 0);
    let mut u = channel(&lvl.v, 0);
    let omega = st.omegas[k];
    for (i, &on) in active.indexed_iter() {
        if on {
            let r = lvl.f[i] - (au[i] + ubar[i]);
            u[i] += omega * r;
            if !u[i].is_finite() {
                return Err(Error::NonFinite(format!("conv smoothing on level {k}")));
            }
        }
    }
    st.levels[k].v = stack(bank, masks, k, &u)?;
    Ok(())
}

/// `ubar^{k-1} = P^T (ubar^k + (Abar^k)^T u^k)` through the scratch stack.
fn restrict_update(bank: &StencilBank, st: &mut ConvLlmgState, k: usize) -> Result<()> {
    let masks = &st.masks;
    let lvl = &st.levels[k];
    let at = conv_apply_a_transpose(bank, k, &channel(&lvl.v, 0), &lvl.upsilon, masks.active(k), masks.closure(k))?;
    let z = &channel(&lvl.ubar, 0) + &at;
    st.levels[k].z = stack(bank, masks, k, &z)?;
    let coarse = conv_restrict(bank, &z, masks.closure(k), masks.closure(k - 1))?;
    st.levels[k - 1].ubar = stack(bank, masks, k - 1, &coarse)?;
    Ok(())
}

/// `utilde^{k+1} = P (utilde^k + u^k)` through the scratch stack.
fn prolongate_update(bank: &StencilBank, st: &mut ConvLlmgState, k: usize) -> Result<()> {
    let masks = &st.masks;
    let lvl = &st.levels[k];
    let z = &channel(&lvl.utilde, 0) + &channel(&lvl.v, 0);
    st.levels[k].z = stack(bank, masks, k, &z)?;
    let fine = conv_prolongate(bank, &z, masks.closure(k), masks.closure(k + 1))?;
    st.levels[k + 1].utilde = stack(bank, masks, k + 1, &fine)?;
    Ok(())
}

/// One sweep: smoothing and restriction from the finest level down, then
/// smoothing and prolongation back up.
pub fn conv_llmg_sweep(bank: &StencilBank, state: &ConvLlmgState) -> Result<ConvLlmgState> {
    let mut st = state.clone();
    let levels = st.levels.len();
    let n = st.masks.hierarchy().n(levels - 1);
    st.levels[levels - 1].ubar = Array3::zeros((STACK_CHANNELS, n, n));
    for k in (0..levels).rev() {
        smooth(bank, &mut st, k)?;
        if k > 0 {
            restrict_update(bank, &mut st, k)?;
        }
    }
    for k in 0..levels {
        smooth(bank, &mut st, k)?;
        if k + 1 < levels {
            prolongate_update(bank, &mut st, k)?;
        }
    }
    Ok(st)
}
