use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{gen_synthetic, make_fscil_splits, FscilSplit, SplitParams, TokenFile};
use crate::encoders::{load_image_features, FeatureAccess, ImageFeatureSource};
use crate::error::{Error, Result};
use crate::metrics::{RunReport, SessionReport};
use crate::model::Model;
use crate::numkernel::SgdState;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::session::{evaluate, train_base_session, train_incremental_session, SessionData, SessionParams};

/// Stream of the trainer PRNG; the encoder uses stream 1 of the same seed.
const TRAINER_STREAM: u64 = 2;

/// Loaded or generated features for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: ImageFeatureSource,
    pub test: ImageFeatureSource,
    pub tokens: Option<TokenFile>,
}

impl DataBundle {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let (train, test) = match (&config.train_data, &config.test_data) {
            (Some(tr), Some(te)) => (load_image_features(tr)?, load_image_features(te)?),
            _ => {
                let data = gen_synthetic(&config.synthetic_spec(), config.seed)?;
                (ImageFeatureSource::from_set(&data.train)?, ImageFeatureSource::from_set(&data.test)?)
            }
        };
        let tokens = config.token_embeddings.as_deref().map(TokenFile::read).transpose()?;
        if let Some(t) = &tokens {
            if t.l_ctx as usize != config.l_ctx || t.dim as usize != config.dim {
                return Err(Error::Setup(format!(
                    "token file is {}x{}, config needs {}x{}",
                    t.l_ctx, t.dim, config.l_ctx, config.dim
                )));
            }
        }
        Ok(Self { train, test, tokens })
    }
}

fn labels(src: &dyn FeatureAccess) -> Vec<u32> {
    (0..src.len()).map(|i| src.label(i)).collect()
}

/// Session-by-session driver of the whole protocol.
pub struct Runner<'d> {
    config: RunConfig,
    model: Model,
    sgd: SgdState,
    rng: ChaCha8Rng,
    split: FscilSplit,
    train: &'d dyn FeatureAccess,
    test: &'d dyn FeatureAccess,
    tokens: Option<&'d TokenFile>,
    reports: Vec<SessionReport>,
}

impl<'d> Runner<'d> {
    pub fn new(config: &RunConfig, data: &'d DataBundle) -> Result<Self> {
        Self::with_sources(config, &data.train, &data.test, data.tokens.as_ref())
    }

    pub fn with_sources(
        config: &RunConfig,
        train: &'d dyn FeatureAccess,
        test: &'d dyn FeatureAccess,
        tokens: Option<&'d TokenFile>,
    ) -> Result<Self> {
        config.validate()?;
        for (what, src) in [("training", train), ("test", test)] {
            if src.dim() != config.dim {
                return Err(Error::Setup(format!(
                    "{what} features have dim {}, config dim is {}",
                    src.dim(),
                    config.dim
                )));
            }
        }
        let split = Self::make_split(config, train, test)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAINER_STREAM);
        let model = Model::new(config.seed, config.l_ctx, config.dim, config.keymap_variant, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            model,
            sgd: SgdState::new(config.sgd()),
            rng,
            split,
            train,
            test,
            tokens,
            reports: Vec::new(),
        })
    }

    /// Continue from a checkpoint with the same data the run started with.
    pub fn resume(
        ckpt: &Checkpoint,
        train: &'d dyn FeatureAccess,
        test: &'d dyn FeatureAccess,
        tokens: Option<&'d TokenFile>,
    ) -> Result<Self> {
        let (model, sgd, rng) = ckpt.restore()?;
        let config = ckpt.config.clone();
        let split = Self::make_split(&config, train, test)?;
        for (t, classes) in ckpt.classes.iter().enumerate() {
            let ids: Vec<u32> = classes.iter().map(|c| c.class_id).collect();
            if split.sessions.get(t).map(|s| &s.classes) != Some(&ids) {
                return Err(Error::Setup(format!(
                    "checkpoint session {} classes do not match the data split",
                    t + 1
                )));
            }
        }
        Ok(Self {
            config,
            model,
            sgd,
            rng,
            split,
            train,
            test,
            tokens,
            reports: ckpt.reports.clone(),
        })
    }

    fn make_split(config: &RunConfig, train: &dyn FeatureAccess, test: &dyn FeatureAccess) -> Result<FscilSplit> {
        let (tr, te) = (labels(train), labels(test));
        let split = make_fscil_splits(
            &tr,
            &te,
            SplitParams {
                base_classes: config.base_classes,
                ways: config.ways,
                shots: config.shots,
                sessions: config.sessions,
                seed: config.seed,
            },
        )?;
        split.validate(&tr, &te)?;
        Ok(split)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn split(&self) -> &FscilSplit {
        &self.split
    }

    pub fn reports(&self) -> &[SessionReport] {
        &self.reports
    }

    pub fn sessions_completed(&self) -> usize {
        self.reports.len()
    }

    pub fn is_done(&self) -> bool {
        self.reports.len() >= self.config.sessions
    }

    /// Initialize, train, round to storage precision, evaluate.
    pub fn step(&mut self) -> Result<&SessionReport> {
        let t = self.reports.len();
        if self.is_done() {
            return Err(Error::Setup("all sessions already ran".into()));
        }
        let cfg = &self.config;
        let session = &self.split.sessions[t];
        let classes: Vec<(u32, String)> = session
            .classes
            .iter()
            .map(|&c| {
                let name = self
                    .train
                    .class_name(c)
                    .ok_or_else(|| Error::Setup(format!("class {c} has no name in the manifest")))?;
                Ok((c, name.to_string()))
            })
            .collect::<Result<_>>()?;
        self.model
            .add_session(&classes, self.tokens, cfg.n_pairs(t), cfg.pair_init, &mut self.rng)?;

        let params = SessionParams {
            epochs: cfg.epochs(t),
            batch_size: cfg.batch_size,
            k_pr: cfg.k_pr,
            tau: cfg.tau,
            scope: cfg.update_scope,
        };
        let data = SessionData {
            source: self.train,
            ids: &session.train,
        };
        let state = if t == 0 {
            train_base_session(&mut self.model, &mut self.sgd, &mut self.rng, data, &params)?
        } else {
            train_incremental_session(
                &mut self.model,
                &mut self.sgd,
                &mut self.rng,
                data,
                t,
                cfg.ways,
                cfg.shots,
                &params,
            )?
        };
        self.model.store.quantize_f32();
        self.sgd.quantize_f32();

        let base: BTreeSet<u32> = self.split.sessions[0].classes.iter().copied().collect();
        let (counts, per_class) = evaluate(&self.model, self.test, &session.test, &base, cfg.k_pr, cfg.tau)?;
        self.reports.push(SessionReport {
            session: t + 1,
            classes_seen: self.model.num_classes(),
            accuracy: counts.row(t + 1)?,
            counts,
            per_class,
            loss_trace: state.loss_trace,
            config_digest: cfg.digest(),
        });
        Ok(self.reports.last().expect("just pushed"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, &self.model, &self.sgd, &self.rng, &self.reports)
    }

    pub fn report(&self) -> Result<RunReport> {
        RunReport::from_sessions(self.reports.clone())
    }

    /// Re-evaluate the current model on its latest session's test set.
    pub fn reevaluate(&self) -> Result<SessionReport> {
        let last = self
            .reports
            .last()
            .ok_or_else(|| Error::Setup("nothing trained yet".into()))?;
        let t = last.session - 1;
        let base: BTreeSet<u32> = self.split.sessions[0].classes.iter().copied().collect();
        let (counts, per_class) = evaluate(
            &self.model,
            self.test,
            &self.split.sessions[t].test,
            &base,
            self.config.k_pr,
            self.config.tau,
        )?;
        Ok(SessionReport {
            accuracy: counts.row(t + 1)?,
            counts,
            per_class,
            ..last.clone()
        })
    }
}

pub fn checkpoint_path(dir: &Path, session: usize) -> PathBuf {
    dir.join(format!("session_{session}.iosc"))
}

/// Run every remaining session, saving a checkpoint after each one when
/// `checkpoint_dir` is given.
pub fn drive(runner: &mut Runner<'_>, checkpoint_dir: Option<&Path>) -> Result<RunReport> {
    while !runner.is_done() {
        let t = runner.step()?.session;
        log::info!(
            "session {t}: acc_all {:.4}",
            runner.reports().last().map(|r| r.accuracy.all).unwrap_or(0.0)
        );
        if let Some(dir) = checkpoint_dir {
            runner.checkpoint().save(&checkpoint_path(dir, t))?;
        }
    }
    runner.report()
}

/// The full protocol on in-memory data.
pub fn run_protocol(config: &RunConfig, data: &DataBundle) -> Result<RunReport> {
    let mut runner = Runner::new(config, data)?;
    drive(&mut runner, None)
}
