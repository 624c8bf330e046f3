//! Terminal-reward generation environment and the PPO loop.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::optim::{clip_grad_norm, Adam, AdamConfig, OptimError};
use crate::policy::loss::{ppo_loss, LossError, PpoCoefficients, PpoLoss, PpoTarget};
use crate::policy::math::log_softmax;
use crate::policy::{
    sample_categorical, Actor, ActorCritic, ActorTrace, Critic, CriticTrace, HiddenState, ModelDims, PolicyError,
    Real,
};
use crate::pretrain::accumulate;
use crate::tssr::{item_rng, RewardBreakdown, RewardPath, Tssr};
use crate::vocab::{Vocabulary, BOS_INDEX, EOS_INDEX};

/// Episode length cap, counted in prefix tokens including [BOS].
pub const T_MAX: usize = 60;

const REWARD_STREAM_SALT: u64 = 0x7e3a_11d5_0000_0002;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("initial checkpoint has vocabulary size {found}, expected {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("initial checkpoint dimensions do not match the configured model")]
    DimsMismatch,
    #[error("fine-tuning requires an initial checkpoint")]
    InitRequired,
    #[error("training from scratch does not take an initial checkpoint")]
    InitForbidden,
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("advantage estimation: {0}")]
    Gae(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// From random initialization.
    PRl,
    /// Fine-tuning a pretrained actor.
    FRl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PRl => "prl",
            Mode::FRl => "frl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prl" => Some(Mode::PRl),
            "frl" => Some(Mode::FRl),
            _ => None,
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Mode::PRl => 1e-4,
            Mode::FRl => 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub steps_per_epoch: usize,
    pub steps_per_collect: usize,
    pub repeat_per_collect: usize,
    pub batch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub c_s: f64,
    pub c_v: f64,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub value_clip: f64,
    pub n_env: usize,
    pub normalize_advantages: bool,
}

impl PpoConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            steps_per_epoch: 512,
            steps_per_collect: 60,
            repeat_per_collect: 1,
            batch: 512,
            epochs: 1000,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            c_s: 0.01,
            c_v: 0.5,
            max_grad_norm: 0.5,
            lr: mode.default_lr(),
            value_clip: 0.2,
            n_env: 1,
            normalize_advantages: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        let counts = [
            self.steps_per_epoch,
            self.steps_per_collect,
            self.repeat_per_collect,
            self.batch,
            self.epochs,
        ];
        if counts.contains(&0) {
            return bad("step counts, batch and epochs must be positive");
        }
        if self.n_env != 1 {
            return bad("n_env must be 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        for (name, x) in [
            ("c_s", self.c_s),
            ("c_v", self.c_v),
            ("max_grad_norm", self.max_grad_norm),
            ("lr", self.lr),
            ("value_clip", self.value_clip),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Collect/update cycles per epoch.
    pub fn collects_per_epoch(&self) -> usize {
        self.steps_per_epoch.div_ceil(self.steps_per_collect)
    }

    pub fn coefficients(&self) -> PpoCoefficients {
        PpoCoefficients {
            clip: self.clip,
            value_clip: self.value_clip,
            c_v: self.c_v,
            c_s: self.c_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: usize,
    pub reward: f64,
    pub done: bool,
    /// Set on the terminal step.
    pub breakdown: Option<RewardBreakdown>,
}

/// Token-by-token generation with a reward only at the end.
#[derive(Debug)]
pub struct Env<'a> {
    tssr: &'a Tssr,
    prefix: Vec<usize>,
    done: bool,
}

impl<'a> Env<'a> {
    pub fn new(tssr: &'a Tssr) -> Self {
        Self {
            tssr,
            prefix: vec![BOS_INDEX],
            done: false,
        }
    }

    pub fn reset(&mut self) -> usize {
        self.prefix.clear();
        self.prefix.push(BOS_INDEX);
        self.done = false;
        BOS_INDEX
    }

    pub fn prefix(&self) -> &[usize] {
        &self.prefix
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Appends `action`. Ends on [EOS] or when the prefix reaches [`T_MAX`];
    /// the finished string is scored with every special token removed.
    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<StepResult, TrainError> {
        if self.done {
            return Err(TrainError::EpisodeDone);
        }
        self.prefix.push(action);
        self.done = action == EOS_INDEX || self.prefix.len() >= T_MAX;
        if !self.done {
            return Ok(StepResult {
                observation: action,
                reward: 0.0,
                done: false,
                breakdown: None,
            });
        }
        let content: Vec<usize> = self
            .prefix
            .iter()
            .copied()
            .filter(|&t| !Vocabulary::is_special(t))
            .collect();
        let breakdown = self.tssr.reward(&content, rng);
        Ok(StepResult {
            observation: action,
            reward: breakdown.reward,
            done: true,
            breakdown: Some(breakdown),
        })
    }
}

/// Generalized advantage estimates and critic targets. The value after a
/// `done` step is 0; the last transition must be terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(TrainError::Gae(format!(
            "{n} rewards, {} values, {} done flags",
            values.len(),
            dones.len()
        )));
    }
    if n > 0 && !dones[n - 1] {
        return Err(TrainError::Gae("last transition is not terminal".into()));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] { (0.0, 0.0) } else { (values[t + 1], running) };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Rollout record of one token decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub episode: u64,
    pub observation: usize,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// A finished episode with frozen PPO targets. `tokens` is `[BOS] a_1 … a_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTargets {
    pub tokens: Vec<usize>,
    pub targets: Vec<PpoTarget>,
}

/// PPO loss over whole episodes, re-scored under `model` by teacher forcing,
/// and its gradient.
pub fn ppo_objective<T: Real>(
    model: &ActorCritic<T>,
    episodes: &[EpisodeTargets],
    coef: &PpoCoefficients,
) -> Result<(PpoLoss, ActorCritic<T>), TrainError> {
    let traces: Vec<(ActorTrace<T>, CriticTrace<T>)> = episodes
        .par_iter()
        .map(|ep| {
            let n = ep.tokens.len();
            let a = model.actor.trace::<rand_chacha::ChaCha8Rng>(&ep.tokens, None)?;
            let c = model.critic.trace(&ep.tokens[..n - 1])?;
            Ok((a, c))
        })
        .collect::<Result<_, PolicyError>>()?;

    let mut logits = Vec::new();
    let mut values = Vec::new();
    let mut targets = Vec::new();
    let mut bounds = Vec::with_capacity(episodes.len());
    for (ep, (a, c)) in episodes.iter().zip(&traces) {
        if ep.targets.len() != a.logits.len() {
            return Err(LossError::Shape(format!(
                "episode of {} actions has {} targets",
                a.logits.len(),
                ep.targets.len()
            ))
            .into());
        }
        let start = logits.len();
        logits.extend(a.logits.iter().cloned());
        values.extend_from_slice(&c.values);
        targets.extend_from_slice(&ep.targets);
        bounds.push(start..logits.len());
    }
    let (loss, dlogits, dvalues) = ppo_loss(&logits, &values, &targets, coef)?;

    let grads = accumulate(model, traces.len(), |i, g: &mut ActorCritic<T>| {
        let (a, c) = &traces[i];
        let r = bounds[i].clone();
        model.actor.backward(a, &dlogits[r.clone()], &mut g.actor);
        model.critic.backward(c, &dvalues[r], &mut g.critic);
    });
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: u64,
    /// Number of actions.
    pub length: usize,
    pub terminal_reward: f64,
    pub discounted_return: f64,
    pub path: RewardPath,
}

impl EpisodeRecord {
    pub const HEADER: &'static str = "episode\tlength\tterminal_R\tdiscounted_return";

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.episode, self.length, self.terminal_reward, self.discounted_return
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub model: ActorCritic<f32>,
    pub adam: Adam<f32>,
    /// Episode whose return set the record.
    pub episode: u64,
    pub discounted_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ActorCritic<f32>,
    pub adam: Adam<f32>,
    /// Parameters at the highest discounted episode return; ties go to the
    /// later episode.
    pub best: Option<Snapshot>,
    pub episodes: Vec<EpisodeRecord>,
    pub updates: Vec<PpoLoss>,
    pub transitions: u64,
    pub seconds: f64,
}

impl TrainOutcome {
    pub fn peak_return(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.discounted_return)
    }
}

struct Rollout {
    actor_state: HiddenState<f32>,
    critic_state: HiddenState<f32>,
    observation: usize,
    current: Vec<Transition>,
    finished: Vec<Vec<Transition>>,
    episode: u64,
}

/// Builds the model for `mode`. The critic starts from a copy of the actor's
/// backbone.
pub fn initial_model(
    dims: ModelDims,
    mode: Mode,
    init: Option<&Actor<f32>>,
    seed: u64,
) -> Result<ActorCritic<f32>, TrainError> {
    let actor = match (mode, init) {
        (Mode::PRl, None) => Actor::init(dims, &mut item_rng(seed, 0)),
        (Mode::PRl, Some(_)) => return Err(TrainError::InitForbidden),
        (Mode::FRl, None) => return Err(TrainError::InitRequired),
        (Mode::FRl, Some(a)) => {
            if a.dims.vocab != dims.vocab {
                return Err(TrainError::VocabMismatch {
                    expected: dims.vocab,
                    found: a.dims.vocab,
                });
            }
            if a.dims != dims {
                return Err(TrainError::DimsMismatch);
            }
            a.clone()
        }
    };
    let critic = Critic::from_actor(&actor, &mut item_rng(seed, 1));
    Ok(ActorCritic { actor, critic })
}

/// Runs PPO for `config.epochs` epochs. `on_episode` sees every finished
/// episode in order.
pub fn train(
    tssr: &Tssr,
    dims: ModelDims,
    mode: Mode,
    config: &PpoConfig,
    init: Option<&Actor<f32>>,
    seed: u64,
    mut on_episode: impl FnMut(&EpisodeRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if tssr.lex().len() != dims.vocab {
        return Err(TrainError::VocabMismatch {
            expected: tssr.lex().len(),
            found: dims.vocab,
        });
    }
    let mut model = initial_model(dims, mode, init, seed)?;
    let mut adam = Adam::new(&model, AdamConfig::with_lr(config.lr));
    let coef = config.coefficients();
    let mut action_rng = item_rng(seed, 2);
    let mut env = Env::new(tssr);
    let mut rollout = Rollout {
        actor_state: HiddenState::zeros(&dims),
        critic_state: HiddenState::zeros(&dims),
        observation: env.reset(),
        current: Vec::new(),
        finished: Vec::new(),
        episode: 1,
    };
    let mut best: Option<Snapshot> = None;
    let mut episodes = Vec::new();
    let mut updates = Vec::new();
    let mut transitions = 0u64;
    let started = Instant::now();

    for _ in 0..config.epochs {
        let mut epoch_steps = 0;
        while epoch_steps < config.steps_per_epoch {
            for _ in 0..config.steps_per_collect {
                let obs = rollout.observation;
                let logits = model.actor.forward_step(&mut rollout.actor_state, obs)?;
                let value = model.critic.value_step(&mut rollout.critic_state, obs)?;
                let lp = log_softmax(&logits);
                let action = sample_categorical(&lp, &mut action_rng);
                let mut reward_rng = item_rng(seed ^ REWARD_STREAM_SALT, rollout.episode);
                let step = env.step(action, &mut reward_rng)?;
                rollout.current.push(Transition {
                    episode: rollout.episode,
                    observation: obs,
                    action,
                    log_prob: lp[action].as_f64(),
                    value: value.as_f64(),
                    reward: step.reward,
                    done: step.done,
                });
                rollout.observation = step.observation;
                transitions += 1;
                if step.done {
                    let trans = std::mem::take(&mut rollout.current);
                    let record = episode_record(&trans, config.gamma, step.breakdown.as_ref());
                    if best.as_ref().is_none_or(|b| record.discounted_return >= b.discounted_return) {
                        best = Some(Snapshot {
                            model: model.clone(),
                            adam: adam.clone(),
                            episode: record.episode,
                            discounted_return: record.discounted_return,
                        });
                    }
                    on_episode(&record);
                    episodes.push(record);
                    rollout.finished.push(trans);
                    rollout.episode += 1;
                    rollout.observation = env.reset();
                    rollout.actor_state = HiddenState::zeros(&dims);
                    rollout.critic_state = HiddenState::zeros(&dims);
                }
            }
            epoch_steps += config.steps_per_collect;
            let finished = std::mem::take(&mut rollout.finished);
            if !finished.is_empty() {
                let batch = episode_targets(&finished, config)?;
                for _ in 0..config.repeat_per_collect {
                    for mb in minibatches(&batch, config.batch) {
                        let (loss, mut grads) = ppo_objective(&model, mb, &coef)?;
                        clip_grad_norm(&mut grads, config.max_grad_norm);
                        adam.step(&mut model, &grads)?;
                        updates.push(loss);
                    }
                }
            }
        }
    }
    Ok(TrainOutcome {
        model,
        adam,
        best,
        episodes,
        updates,
        transitions,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn episode_record(trans: &[Transition], gamma: f64, breakdown: Option<&RewardBreakdown>) -> EpisodeRecord {
    let mut discount = 1.0;
    let mut ret = 0.0;
    for t in trans {
        ret += discount * t.reward;
        discount *= gamma;
    }
    let last = trans.last().expect("an episode has at least one step");
    EpisodeRecord {
        episode: last.episode,
        length: trans.len(),
        terminal_reward: last.reward,
        discounted_return: ret,
        path: breakdown.map_or(RewardPath::Unrepairable, |b| b.path),
    }
}

fn episode_targets(finished: &[Vec<Transition>], config: &PpoConfig) -> Result<Vec<EpisodeTargets>, TrainError> {
    let flat: Vec<&Transition> = finished.iter().flatten().collect();
    let rewards: Vec<f64> = flat.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = flat.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = flat.iter().map(|t| t.done).collect();
    let (mut adv, ret) = compute_gae(&rewards, &values, &dones, config.gamma, config.lambda)?;
    if config.normalize_advantages && adv.len() > 1 {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
    }
    let mut k = 0;
    Ok(finished
        .iter()
        .map(|ep| {
            let mut tokens = Vec::with_capacity(ep.len() + 1);
            tokens.push(BOS_INDEX);
            let targets = ep
                .iter()
                .map(|t| {
                    tokens.push(t.action);
                    let tg = PpoTarget {
                        action: t.action,
                        log_prob_old: t.log_prob,
                        value_old: t.value,
                        advantage: adv[k],
                        ret: ret[k],
                    };
                    k += 1;
                    tg
                })
                .collect();
            EpisodeTargets { tokens, targets }
        })
        .collect())
}

/// Consecutive groups of whole episodes with at most `batch` transitions,
/// except that an over-long episode forms a group of its own.
fn minibatches(episodes: &[EpisodeTargets], batch: usize) -> Vec<&[EpisodeTargets]> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut size = 0;
    for (i, ep) in episodes.iter().enumerate() {
        if size > 0 && size + ep.targets.len() > batch {
            out.push(&episodes[start..i]);
            start = i;
            size = 0;
        }
        size += ep.targets.len();
    }
    if start < episodes.len() {
        out.push(&episodes[start..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tssr::TssrConfig;
    use crate::vocab::{build_vocabulary, compute_priors};

    fn setup() -> (Vocabulary, Tssr) {
        let corpus = ["CCO", "c1ccccc1", "CC(=O)N", "C1CC1"];
        let v = build_vocabulary(corpus).unwrap();
        let p = compute_priors(corpus, &v).unwrap();
        let t = Tssr::new(&v, &p, TssrConfig::default()).unwrap();
        (v, t)
    }

    #[test]
    fn env_reset_and_steps() {
        let (v, t) = setup();
        let mut env = Env::new(&t);
        assert_eq!(env.reset(), BOS_INDEX);
        assert_eq!(env.reset(), BOS_INDEX);
        assert_eq!(env.prefix().len(), 1);
        let c = v.index_of("C").unwrap();
        let mut rng = item_rng(0, 0);
        let s = env.step(c, &mut rng).unwrap();
        assert_eq!((s.observation, s.reward, s.done), (c, 0.0, false));
        // The prefix [BOS] C [EOS] holds one content token.
        let s = env.step(EOS_INDEX, &mut rng).unwrap();
        assert!(s.done);
        let expected = t.reward(&[c], &mut item_rng(0, 0)).reward;
        assert_eq!(s.reward, expected);
        assert_eq!(s.reward, 0.5);
        assert!(matches!(env.step(c, &mut rng), Err(TrainError::EpisodeDone)));
    }

    #[test]
    fn env_truncates_at_length_cap() {
        let (v, t) = setup();
        let mut env = Env::new(&t);
        env.reset();
        let c = v.index_of("C").unwrap();
        let mut rng = item_rng(0, 0);
        for i in 1..T_MAX {
            let s = env.step(c, &mut rng).unwrap();
            assert_eq!(s.done, i == T_MAX - 1);
            if !s.done {
                assert_eq!(s.reward, 0.0);
            }
        }
        assert!(env.is_done());
        assert_eq!(env.prefix().len(), T_MAX);
    }

    #[test]
    fn gae_examples() {
        let (a, r) = compute_gae(&[0.0, 0.0, 1.0], &[0.0; 3], &[false, false, true], 0.99, 0.95).unwrap();
        let expected = [0.88454025, 0.9405, 1.0];
        for i in 0..3 {
            assert!((a[i] - expected[i]).abs() < 1e-12);
            assert_eq!(a[i], r[i]);
        }
        let (a, r) = compute_gae(&[0.7], &[0.25], &[true], 0.99, 0.95).unwrap();
        assert!((a[0] - 0.45).abs() < 1e-15);
        assert!((r[0] - 0.7).abs() < 1e-15);
        assert!(compute_gae(&[0.0], &[0.0, 0.0], &[true], 0.99, 0.95).is_err());
        assert!(compute_gae(&[0.0], &[0.0], &[false], 0.99, 0.95).is_err());
    }

    #[test]
    fn gae_does_not_cross_episode_boundaries() {
        let (a, _) = compute_gae(&[0.0, 1.0, 0.0, -1.0], &[0.0; 4], &[false, true, false, true], 0.9, 0.5).unwrap();
        assert_eq!(a, vec![0.45, 1.0, -0.45, -1.0]);
    }

    #[test]
    fn collects_per_epoch() {
        let cfg = PpoConfig::for_mode(Mode::PRl);
        assert_eq!(cfg.collects_per_epoch(), 9);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(PpoConfig::for_mode(Mode::FRl).lr, 1e-8);
        assert!(cfg.validate().is_ok());
        let mut bad = cfg;
        bad.gamma = 1.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn minibatches_keep_episodes_whole() {
        let ep = |n: usize| EpisodeTargets {
            tokens: vec![BOS_INDEX; n + 1],
            targets: vec![
                PpoTarget {
                    action: 0,
                    log_prob_old: 0.0,
                    value_old: 0.0,
                    advantage: 0.0,
                    ret: 0.0
                };
                n
            ],
        };
        let eps = vec![ep(3), ep(4), ep(2), ep(9), ep(1)];
        let sizes: Vec<usize> = minibatches(&eps, 7).iter().map(|m| m.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1, 1]);
        assert_eq!(minibatches(&eps, 100).len(), 1);
    }

    #[test]
    fn mode_preconditions() {
        let (v, _) = setup();
        let dims = ModelDims::new(v.len(), 8, 1);
        let a = Actor::<f32>::init(dims, &mut item_rng(0, 0));
        assert!(matches!(initial_model(dims, Mode::FRl, None, 0), Err(TrainError::InitRequired)));
        assert!(matches!(initial_model(dims, Mode::PRl, Some(&a), 0), Err(TrainError::InitForbidden)));
        let other = Actor::<f32>::init(ModelDims::new(v.len() + 1, 8, 1), &mut item_rng(0, 0));
        assert!(matches!(
            initial_model(dims, Mode::FRl, Some(&other), 0),
            Err(TrainError::VocabMismatch { .. })
        ));
        let m = initial_model(dims, Mode::FRl, Some(&a), 0).unwrap();
        assert_eq!(m.actor, a);
        assert_eq!(m.critic.backbone, a.backbone);
    }

    #[test]
    fn short_run_is_deterministic_and_logs_terminal_returns() {
        let (v, t) = setup();
        let dims = ModelDims::new(v.len(), 8, 1);
        let cfg = PpoConfig {
            epochs: 2,
            steps_per_epoch: 64,
            steps_per_collect: 20,
            ..PpoConfig::for_mode(Mode::PRl)
        };
        let mut seen = 0;
        let a = train(&t, dims, Mode::PRl, &cfg, None, 9, |_| seen += 1).unwrap();
        let b = train(&t, dims, Mode::PRl, &cfg, None, 9, |_| {}).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(seen, a.episodes.len());
        assert_eq!(a.transitions, 2 * 4 * 20);
        assert!(!a.updates.is_empty());
        for e in &a.episodes {
            let closed = cfg.gamma.powi(e.length as i32 - 1) * e.terminal_reward;
            assert!((e.discounted_return - closed).abs() < 1e-12);
        }
        let peak = a.episodes.iter().map(|e| e.discounted_return).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.peak_return(), Some(peak));
        assert_ne!(a.model, initial_model(dims, Mode::PRl, None, 9).unwrap());
    }
}
