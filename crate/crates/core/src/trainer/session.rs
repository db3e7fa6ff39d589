use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::classify::{predict, target_index, ForwardCtx};
use crate::encoders::FeatureAccess;
use crate::error::{Error, Result};
use crate::metrics::{ClassAccuracy, EvalCounts};
use crate::model::Model;
use crate::numkernel::{eval_with_gradients, ParamId, SgdState};
use crate::params::ParamRole;

use super::config::UpdateScope;

/// Training samples of one session: a source plus the ids it may read.
#[derive(Clone, Copy)]
pub struct SessionData<'a> {
    pub source: &'a dyn FeatureAccess,
    pub ids: &'a [usize],
}

/// Hyperparameters a single session needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub k_pr: usize,
    pub tau: f64,
    pub scope: UpdateScope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    /// 0-based.
    pub session: usize,
    pub learnable: Vec<ParamId>,
    /// Digests of everything frozen, checked after training.
    pub frozen: BTreeMap<String, String>,
    /// Sample-weighted mean loss per epoch.
    pub loss_trace: Vec<f64>,
}

const ENCODER_KEY: &str = "<text-encoder>";

/// Parameters trained in session `t` under `scope`.
pub fn learnable_mask(model: &Model, t: usize, scope: UpdateScope) -> Vec<bool> {
    model
        .store
        .ids()
        .map(|id| {
            let role = model.store.meta(id).role;
            match (t, scope, role) {
                (0, _, ParamRole::KeyMap) => true,
                (_, UpdateScope::AllParams, _) => true,
                (_, UpdateScope::PlusKeymap, ParamRole::KeyMap) => true,
                _ => role.owner_session() == Some(t),
            }
        })
        .collect()
}

fn frozen_digests(model: &Model, mask: &[bool]) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = model
        .store
        .ids()
        .filter(|id| !mask[id.0])
        .map(|id| (model.store.meta(id).name.clone(), model.store.digest(id)))
        .collect();
    out.insert(ENCODER_KEY.into(), model.encoder.digest());
    out
}

/// Compare against digests taken before training.
pub fn verify_frozen(model: &Model, state: &SessionState) -> Result<()> {
    for (name, before) in &state.frozen {
        let now = if name == ENCODER_KEY {
            model.encoder.digest()
        } else {
            let id = model
                .store
                .find(name)
                .ok_or_else(|| Error::FreezeViolation(format!("{name} vanished")))?;
            model.store.digest(id)
        };
        if &now != before {
            return Err(Error::FreezeViolation(format!(
                "{name} changed during session {}",
                state.session + 1
            )));
        }
    }
    Ok(())
}

/// Shuffled mini-batch SGD over the session's samples; the last partial
/// batch is kept.
pub fn train_session<R: Rng>(
    model: &mut Model,
    sgd: &mut SgdState,
    rng: &mut R,
    data: SessionData<'_>,
    t: usize,
    params: &SessionParams,
) -> Result<SessionState> {
    if data.ids.is_empty() {
        return Err(Error::Setup(format!("session {} has no training samples", t + 1)));
    }
    if model.num_sessions() != t + 1 {
        return Err(Error::Contract(format!(
            "session {} trained with {} initialized sessions",
            t + 1,
            model.num_sessions()
        )));
    }
    if data.source.dim() != model.dim() {
        return Err(Error::Setup(format!(
            "features have dim {}, model expects {}",
            data.source.dim(),
            model.dim()
        )));
    }
    let mask = learnable_mask(model, t, params.scope);
    let mut state = SessionState {
        session: t,
        learnable: model.store.ids().filter(|id| mask[id.0]).collect(),
        frozen: frozen_digests(model, &mask),
        loss_trace: Vec::with_capacity(params.epochs),
    };
    let targets: Vec<usize> = data
        .ids
        .iter()
        .map(|&i| target_index(model, data.source.label(i)))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..data.ids.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(params.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&j| (data.source.feature(data.ids[j]), targets[j]))
                .collect();
            let snapshot: &Model = model;
            let (loss, grads) = eval_with_gradients(snapshot.store.values(), &mask, |tape| {
                let ctx = ForwardCtx::new(tape, snapshot, params.k_pr, params.tau)?;
                ctx.batch_loss(tape, &batch)
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            for (i, g) in grads.into_iter().enumerate() {
                if let Some(g) = g {
                    sgd.step(ParamId(i), model.store.get_mut(ParamId(i)), &g)?;
                }
            }
            weighted += loss * chunk.len() as f64;
        }
        state.loss_trace.push(weighted / data.ids.len() as f64);
    }
    verify_frozen(model, &state)?;
    Ok(state)
}

/// Session 1: key-map and everything the base session owns.
pub fn train_base_session<R: Rng>(
    model: &mut Model,
    sgd: &mut SgdState,
    rng: &mut R,
    data: SessionData<'_>,
    params: &SessionParams,
) -> Result<SessionState> {
    train_session(model, sgd, rng, data, 0, params)
}

/// Session `t > 0` (0-based) with exactly `ways · shots` samples.
#[allow(clippy::too_many_arguments)]
pub fn train_incremental_session<R: Rng>(
    model: &mut Model,
    sgd: &mut SgdState,
    rng: &mut R,
    data: SessionData<'_>,
    t: usize,
    ways: usize,
    shots: usize,
    params: &SessionParams,
) -> Result<SessionState> {
    if t == 0 {
        return Err(Error::Setup("session 1 is the base session".into()));
    }
    let classes = model.bank.session(t).len();
    if classes != ways || data.ids.len() != ways * shots {
        return Err(Error::Setup(format!(
            "session {} has {classes} classes and {} samples, expected {ways} ways x {shots} shots",
            t + 1,
            data.ids.len()
        )));
    }
    train_session(model, sgd, rng, data, t, params)
}

/// Gradient-free evaluation over `ids`, predictions across all seen classes.
pub fn evaluate(
    model: &Model,
    test: &dyn FeatureAccess,
    ids: &[usize],
    base: &BTreeSet<u32>,
    k_pr: usize,
    tau: f64,
) -> Result<(EvalCounts, Vec<ClassAccuracy>)> {
    let seen: Vec<u32> = model.bank.iter_seen().map(|(_, c)| c.class_id).collect();
    let mut per_class: BTreeMap<u32, ClassAccuracy> = seen
        .iter()
        .map(|&c| (c, ClassAccuracy { class_id: c, correct: 0, total: 0 }))
        .collect();
    let mut counts = EvalCounts::default();
    for &i in ids {
        let truth = test.label(i);
        let entry = per_class
            .get_mut(&truth)
            .ok_or_else(|| Error::Setup(format!("test sample {i} has unseen class {truth}")))?;
        let probs = predict(model, test.feature(i), k_pr, tau)?;
        let hit = seen[probs.argmax()] == truth;
        entry.correct += hit as u64;
        entry.total += 1;
        counts.all.record(hit);
        if base.contains(&truth) {
            counts.base.record(hit);
        } else {
            counts.novel.record(hit);
        }
    }
    Ok((counts, seen.iter().map(|c| per_class[c]).collect()))
}
