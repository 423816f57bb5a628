//! Three coupled untrained networks, six loss terms, and the optimization
//! drivers for single images and warm-started video.
//!
//! The first network reconstructs the image and carries a second head for
//! the alpha matte; two more networks extrapolate foreground and background
//! colors. All outputs are tied together on the unknown trimap region by the
//! compositing equation `I = α·F + (1−α)·B`.

use crate::nn::{self, snapshot::SnapshotEntry, HeadConfig, Network, NnError, UNetConfig};
use crate::tensor::{
    adam_step, AdamHyper, AdamState, Element, Shape, Tape, Tensor, TensorError, Var,
};

/// Per-pixel trimap label.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TrimapLabel {
    Fg,
    Bg,
    Unknown,
}

/// Disjoint boolean planes covering the image: F, B, U, with C = F ∪ B.
#[derive(Clone, Debug)]
pub struct TrimapMasks {
    pub width: usize,
    pub height: usize,
    pub fg: Vec<bool>,
    pub bg: Vec<bool>,
    pub unknown: Vec<bool>,
}

impl TrimapMasks {
    pub fn from_labels(labels: &[TrimapLabel], width: usize, height: usize) -> Self {
        assert_eq!(labels.len(), width * height);
        TrimapMasks {
            width,
            height,
            fg: labels.iter().map(|&l| l == TrimapLabel::Fg).collect(),
            bg: labels.iter().map(|&l| l == TrimapLabel::Bg).collect(),
            unknown: labels.iter().map(|&l| l == TrimapLabel::Unknown).collect(),
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn n_fg(&self) -> usize {
        self.fg.iter().filter(|&&b| b).count()
    }

    pub fn n_bg(&self) -> usize {
        self.bg.iter().filter(|&&b| b).count()
    }

    pub fn n_unknown(&self) -> usize {
        self.unknown.iter().filter(|&&b| b).count()
    }

    pub fn n_constrained(&self) -> usize {
        self.n_pixels() - self.n_unknown()
    }

    /// Target alpha: 1 on F, 0 on B; the value on U is never read because
    /// every use is masked by C.
    pub fn target_alpha<E: Element>(&self) -> Vec<E> {
        self.fg
            .iter()
            .map(|&f| if f { E::one() } else { E::zero() })
            .collect()
    }

    fn mask_plane<E: Element>(&self, which: &[bool], channels: usize) -> (Shape, Vec<E>) {
        let plane: Vec<E> = which
            .iter()
            .map(|&b| if b { E::one() } else { E::zero() })
            .collect();
        let mut data = Vec::with_capacity(channels * plane.len());
        for _ in 0..channels {
            data.extend_from_slice(&plane);
        }
        (Shape::chw(channels, self.height, self.width), data)
    }

    fn constrained_plane(&self) -> Vec<bool> {
        self.unknown.iter().map(|&u| !u).collect()
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub lr: f64,
    pub max_iters: usize,
    /// Warm-mode stopping threshold on the total loss.
    pub loss_threshold: Option<f64>,
    pub seed: u64,
    /// Checkpoint cadence in iterations; 0 disables.
    pub snapshot_every: usize,
    pub net: UNetConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            lr: 0.001,
            max_iters: 4000,
            loss_threshold: None,
            seed: 0,
            snapshot_every: 0,
            net: UNetConfig::desk_default(vec![]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MattingProblem<E: Element> {
    /// RGB image, `[3, H, W]`, values in [0, 1].
    pub image: Tensor<E>,
    pub masks: TrimapMasks,
    pub config: EngineConfig,
}

impl<E: Element> MattingProblem<E> {
    pub fn validate(&self) -> Result<(), EngineError> {
        let (c, h, w) = self.image.shape.as_chw()?;
        if c != 3 || h != self.masks.height || w != self.masks.width {
            return Err(EngineError::SizeMismatch {
                image: self.image.shape.clone(),
                trimap_h: self.masks.height,
                trimap_w: self.masks.width,
            });
        }
        Ok(())
    }
}

/// Per-iteration loss values.
#[derive(Copy, Clone, Debug, Default)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub alpha: f64,
    pub fg: f64,
    pub bg: f64,
    pub composite: f64,
    pub exclusion: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("L_I", self.reconstruction),
            ("L_alpha", self.alpha),
            ("L_F", self.fg),
            ("L_B", self.bg),
            ("L_c", self.composite),
            ("L_e", self.exclusion),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct MatteResult<E: Element> {
    pub alpha: Tensor<E>,
    pub fg: Tensor<E>,
    pub bg: Tensor<E>,
    pub loss_history: Vec<LossBreakdown>,
    pub iterations_run: usize,
}

#[derive(thiserror::Error, Debug)]
pub enum EngineError {
    #[error("image shape {image} does not match trimap {trimap_h}x{trimap_w}")]
    SizeMismatch {
        image: Shape,
        trimap_h: usize,
        trimap_w: usize,
    },
    #[error("degenerate trimap: no constrained pixels (|C| = 0)")]
    DegenerateTrimap,
    #[error("loss term {term} diverged to {value} at iteration {iter}")]
    Diverged {
        term: &'static str,
        value: f64,
        iter: usize,
    },
    #[error("invalid engine config: {0}")]
    BadConfig(String),
    #[error("video frames changed resolution at frame {frame}")]
    ResolutionChange { frame: usize },
    #[error("empty video sequence")]
    EmptyVideo,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Mean over all pixels of the squared RGB distance between `ihat` and `image`.
pub fn loss_reconstruction<E: Element>(
    tape: &mut Tape<E>,
    ihat: Var,
    image: Var,
) -> Result<Var, EngineError> {
    let (_, h, w) = tape.shape(image).as_chw()?;
    let d = tape.sub(ihat, image)?;
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scalar_mul(s, E::from_f64(1.0 / (h * w) as f64)))
}

/// Mean over the constrained region C of the squared alpha error.
pub fn loss_alpha<E: Element>(
    tape: &mut Tape<E>,
    alpha_hat: Var,
    masks: &TrimapMasks,
) -> Result<Var, EngineError> {
    let n_c = masks.n_constrained();
    if n_c == 0 {
        return Err(EngineError::DegenerateTrimap);
    }
    let target = tape.constant(
        Shape::chw(1, masks.height, masks.width),
        masks.target_alpha(),
    )?;
    let (shape, data) = masks.mask_plane(&masks.constrained_plane(), 1);
    let mask = tape.constant(shape, data)?;
    let d = tape.sub(alpha_hat, target)?;
    let sq = tape.square(d);
    let m = tape.mul(sq, mask)?;
    let s = tape.sum(m);
    Ok(tape.scalar_mul(s, E::from_f64(1.0 / n_c as f64)))
}

fn masked_color_mse<E: Element>(
    tape: &mut Tape<E>,
    estimate: Var,
    image: Var,
    masks: &TrimapMasks,
    region: &[bool],
    count: usize,
) -> Result<Var, EngineError> {
    if count == 0 {
        return Ok(tape.constant(Shape::scalar(), vec![E::zero()])?);
    }
    let (shape, data) = masks.mask_plane(region, 3);
    let mask = tape.constant(shape, data)?;
    let d = tape.sub(estimate, image)?;
    let sq = tape.square(d);
    let m = tape.mul(sq, mask)?;
    let s = tape.sum(m);
    Ok(tape.scalar_mul(s, E::from_f64(1.0 / count as f64)))
}

/// Mean squared RGB distance to the image over F only. Zero when |F| = 0.
pub fn loss_fg<E: Element>(
    tape: &mut Tape<E>,
    fg_hat: Var,
    image: Var,
    masks: &TrimapMasks,
) -> Result<Var, EngineError> {
    masked_color_mse(tape, fg_hat, image, masks, &masks.fg, masks.n_fg())
}

/// Mean squared RGB distance to the image over B only. Zero when |B| = 0.
pub fn loss_bg<E: Element>(
    tape: &mut Tape<E>,
    bg_hat: Var,
    image: Var,
    masks: &TrimapMasks,
) -> Result<Var, EngineError> {
    masked_color_mse(tape, bg_hat, image, masks, &masks.bg, masks.n_bg())
}

/// Compositing residual `‖I − (α·F + (1−α)·B)‖²` averaged over U.
pub fn loss_composite<E: Element>(
    tape: &mut Tape<E>,
    alpha_hat: Var,
    fg_hat: Var,
    bg_hat: Var,
    image: Var,
    masks: &TrimapMasks,
) -> Result<Var, EngineError> {
    let n_u = masks.n_unknown();
    if n_u == 0 {
        return Ok(tape.constant(Shape::scalar(), vec![E::zero()])?);
    }
    let alpha3 = tape.concat_channels(&[alpha_hat, alpha_hat, alpha_hat])?;
    let af = tape.mul(alpha3, fg_hat)?;
    let ones = tape.constant(
        tape.shape(alpha3).clone(),
        vec![E::one(); tape.shape(alpha3).numel()],
    )?;
    let inv = tape.sub(ones, alpha3)?;
    let ab = tape.mul(inv, bg_hat)?;
    let comp = tape.add(af, ab)?;
    let resid = tape.sub(image, comp)?;
    let sq = tape.square(resid);
    let (shape, data) = masks.mask_plane(&masks.unknown, 3);
    let mask = tape.constant(shape, data)?;
    let m = tape.mul(sq, mask)?;
    let s = tape.sum(m);
    Ok(tape.scalar_mul(s, E::from_f64(1.0 / n_u as f64)))
}

/// Gradient-product exclusion penalty over U:
/// `‖∇F‖₁‖∇B‖₁ + ‖∇α‖₁‖∇B‖₁`, per pixel, averaged over U.
pub fn loss_exclusion<E: Element>(
    tape: &mut Tape<E>,
    alpha_hat: Var,
    fg_hat: Var,
    bg_hat: Var,
    masks: &TrimapMasks,
) -> Result<Var, EngineError> {
    let n_u = masks.n_unknown();
    if n_u == 0 {
        return Ok(tape.constant(Shape::scalar(), vec![E::zero()])?);
    }
    let gf = tape.spatial_grad_l1(fg_hat)?;
    let gb = tape.spatial_grad_l1(bg_hat)?;
    let ga = tape.spatial_grad_l1(alpha_hat)?;
    let fb = tape.mul(gf, gb)?;
    let ab = tape.mul(ga, gb)?;
    let both = tape.add(fb, ab)?;
    let (shape, data) = masks.mask_plane(&masks.unknown, 1);
    let mask = tape.constant(shape, data)?;
    let m = tape.mul(both, mask)?;
    let s = tape.sum(m);
    Ok(tape.scalar_mul(s, E::from_f64(1.0 / n_u as f64)))
}

/// The six loss terms plus their unweighted sum, as tape variables.
pub struct TotalLoss {
    pub reconstruction: Var,
    pub alpha: Var,
    pub fg: Var,
    pub bg: Var,
    pub composite: Var,
    pub exclusion: Var,
    pub total: Var,
}

impl TotalLoss {
    pub fn breakdown<E: Element>(&self, tape: &Tape<E>) -> LossBreakdown {
        LossBreakdown {
            reconstruction: tape.scalar_value(self.reconstruction).to_f64(),
            alpha: tape.scalar_value(self.alpha).to_f64(),
            fg: tape.scalar_value(self.fg).to_f64(),
            bg: tape.scalar_value(self.bg).to_f64(),
            composite: tape.scalar_value(self.composite).to_f64(),
            exclusion: tape.scalar_value(self.exclusion).to_f64(),
            total: tape.scalar_value(self.total).to_f64(),
        }
    }
}

/// Builds the six-term loss from the network head outputs.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<E: Element>(
    tape: &mut Tape<E>,
    ihat: Var,
    alpha_hat: Var,
    fg_hat: Var,
    bg_hat: Var,
    image: Var,
    masks: &TrimapMasks,
) -> Result<TotalLoss, EngineError> {
    let reconstruction = loss_reconstruction(tape, ihat, image)?;
    let alpha = loss_alpha(tape, alpha_hat, masks)?;
    let fg = loss_fg(tape, fg_hat, image, masks)?;
    let bg = loss_bg(tape, bg_hat, image, masks)?;
    let composite = loss_composite(tape, alpha_hat, fg_hat, bg_hat, image, masks)?;
    let exclusion = loss_exclusion(tape, alpha_hat, fg_hat, bg_hat, masks)?;
    let mut total = tape.add(reconstruction, alpha)?;
    total = tape.add(total, fg)?;
    total = tape.add(total, bg)?;
    total = tape.add(total, composite)?;
    total = tape.add(total, exclusion)?;
    Ok(TotalLoss {
        reconstruction,
        alpha,
        fg,
        bg,
        composite,
        exclusion,
        total,
    })
}

/// Per-pixel `α·F + (1−α)·B` over a new background. No tape involved.
pub fn composite<E: Element>(
    alpha: &Tensor<E>,
    fg: &Tensor<E>,
    new_bg: &Tensor<E>,
) -> Result<Tensor<E>, EngineError> {
    let (ca, h, w) = alpha.shape.as_chw()?;
    let (cf, fh, fw) = fg.shape.as_chw()?;
    let (cb, bh, bw) = new_bg.shape.as_chw()?;
    if ca != 1 || cf != cb || (fh, fw) != (h, w) || (bh, bw) != (h, w) {
        return Err(EngineError::Tensor(TensorError::ShapeMismatch {
            op: "composite",
            left: fg.shape.clone(),
            right: new_bg.shape.clone(),
        }));
    }
    let mut out = vec![E::zero(); cf * h * w];
    for c in 0..cf {
        for i in 0..h * w {
            let a = alpha.data[i];
            out[c * h * w + i] =
                a * fg.data[c * h * w + i] + (E::one() - a) * new_bg.data[c * h * w + i];
        }
    }
    Ok(Tensor::new(Shape::chw(cf, h, w), out)?)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

const NET_PREFIXES: [&str; 3] = ["net_image.", "net_fg.", "net_bg."];
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Builds the three networks for a problem: image+alpha, foreground,
/// background. Each gets an independent seed derived from the master seed.
pub fn build_networks<E: Element>(
    problem: &MattingProblem<E>,
) -> Result<[Network<E>; 3], EngineError> {
    problem.validate()?;
    let (_, h, w) = problem.image.shape.as_chw()?;
    let base = &problem.config.net;
    let mk = |heads: Vec<HeadConfig>| UNetConfig {
        heads,
        ..base.clone()
    };
    let head = |name: &str, channels: usize| HeadConfig {
        name: name.to_string(),
        channels,
    };
    let seed = problem.config.seed;
    Ok([
        nn::build_unet(
            &mk(vec![head("image", 3), head("alpha", 1)]),
            (h, w),
            splitmix64(seed.wrapping_add(1)),
        )?,
        nn::build_unet(&mk(vec![head("fg", 3)]), (h, w), splitmix64(seed.wrapping_add(2)))?,
        nn::build_unet(&mk(vec![head("bg", 3)]), (h, w), splitmix64(seed.wrapping_add(3)))?,
    ])
}

/// Forward pass of all three networks plus the total loss, on one tape.
/// Returns the loss handles, the head outputs, and per-network param vars.
#[allow(clippy::type_complexity)]
pub fn forward_total_loss<E: Element>(
    tape: &mut Tape<E>,
    nets: &[Network<E>; 3],
    problem: &MattingProblem<E>,
) -> Result<(TotalLoss, [Var; 3], Vec<Vec<Var>>), EngineError> {
    let image = tape.leaf(problem.image.clone());
    let pass1 = nets[0].forward(tape)?;
    let pass2 = nets[1].forward(tape)?;
    let pass3 = nets[2].forward(tape)?;
    let ihat = pass1.heads["image"];
    let alpha_hat = pass1.heads["alpha"];
    let fg_hat = pass2.heads["fg"];
    let bg_hat = pass3.heads["bg"];
    let loss = total_loss(tape, ihat, alpha_hat, fg_hat, bg_hat, image, &problem.masks)?;
    Ok((
        loss,
        [alpha_hat, fg_hat, bg_hat],
        vec![pass1.param_vars, pass2.param_vars, pass3.param_vars],
    ))
}

fn check_divergence(b: &LossBreakdown, iter: usize) -> Result<(), EngineError> {
    for (term, v) in b.terms() {
        if !v.is_finite() || v > DIVERGENCE_LIMIT {
            return Err(EngineError::Diverged {
                term,
                value: v,
                iter,
            });
        }
    }
    Ok(())
}

/// Optimization driver shared by cold and warm runs. Mutates `nets` in place.
/// Warm mode (threshold `Some`) stops once the total loss reaches the
/// threshold; cold mode always runs `max_iters`.
#[allow(clippy::type_complexity)]
pub fn optimize<E: Element>(
    problem: &MattingProblem<E>,
    nets: &mut [Network<E>; 3],
    threshold: Option<f64>,
    mut checkpoint: Option<&mut dyn FnMut(usize, &[Network<E>; 3])>,
) -> Result<MatteResult<E>, EngineError> {
    problem.validate()?;
    if problem.masks.n_constrained() == 0 {
        return Err(EngineError::DegenerateTrimap);
    }
    if problem.config.lr <= 0.0 {
        return Err(EngineError::BadConfig("lr must be > 0".into()));
    }
    if problem.masks.n_fg() == 0 {
        eprintln!("warning: trimap has no foreground pixels; L_F is disabled");
    }
    if problem.masks.n_bg() == 0 {
        eprintln!("warning: trimap has no background pixels; L_B is disabled");
    }

    let hyper = AdamHyper {
        lr: problem.config.lr,
        ..AdamHyper::default()
    };
    let mut adam: Vec<Vec<AdamState<E>>> = nets
        .iter()
        .map(|n| n.params().iter().map(|p| AdamState::new(p.value.len())).collect())
        .collect();

    let mut history = Vec::new();
    let mut iterations_run = 0;
    for iter in 0..problem.config.max_iters {
        let mut tape = Tape::new();
        let (loss, _heads, param_vars) = forward_total_loss(&mut tape, nets, problem)?;
        let breakdown = loss.breakdown(&tape);
        check_divergence(&breakdown, iter)?;
        history.push(breakdown);
        iterations_run = iter + 1;
        if let Some(th) = threshold {
            if breakdown.total <= th {
                break;
            }
        }
        tape.backward(loss.total)?;
        for (net, (vars, states)) in nets
            .iter_mut()
            .zip(param_vars.iter().zip(adam.iter_mut()))
        {
            for ((param, &var), state) in
                net.params_mut().iter_mut().zip(vars.iter()).zip(states.iter_mut())
            {
                if let Some(grad) = tape.grad(var) {
                    adam_step(&mut param.value, grad, state, &hyper)?;
                } else {
                    state.t += 1;
                }
            }
        }
        if problem.config.snapshot_every > 0 && (iter + 1) % problem.config.snapshot_every == 0 {
            if let Some(cb) = checkpoint.as_deref_mut() {
                cb(iter + 1, nets);
            }
        }
    }

    // Final forward with the final weights for the returned planes.
    let mut tape = Tape::new();
    let (_, heads, _) = forward_total_loss(&mut tape, nets, problem)?;
    let grab = |tape: &Tape<E>, v: Var| {
        Tensor::new(tape.shape(v).clone(), tape.value(v).to_vec()).expect("head shape")
    };
    Ok(MatteResult {
        alpha: grab(&tape, heads[0]),
        fg: grab(&tape, heads[1]),
        bg: grab(&tape, heads[2]),
        loss_history: history,
        iterations_run,
    })
}

/// Single-image extraction. Cold runs stop at `max_iters`; passing warm
/// snapshots switches to loss-threshold stopping.
pub fn extract_matte<E: Element>(
    problem: &MattingProblem<E>,
    warm: Option<&[SnapshotEntry]>,
) -> Result<MatteResult<E>, EngineError> {
    let mut nets = build_networks(problem)?;
    let threshold = match warm {
        Some(entries) => {
            for (net, prefix) in nets.iter_mut().zip(NET_PREFIXES) {
                net.load_snapshot_entries(prefix, entries)?;
            }
            problem.config.loss_threshold
        }
        None => {
            if problem.config.loss_threshold.is_some() {
                return Err(EngineError::BadConfig(
                    "loss_threshold only applies to warm-started runs".into(),
                ));
            }
            None
        }
    };
    optimize(problem, &mut nets, threshold, None)
}

/// Snapshot entries for all three networks of a problem, for warm start
/// across invocations.
pub fn snapshot_networks<E: Element>(nets: &[Network<E>; 3]) -> Vec<SnapshotEntry> {
    nets.iter()
        .zip(NET_PREFIXES)
        .flat_map(|(n, p)| n.snapshot_entries(p))
        .collect()
}

/// How much above the cold run's final loss the default video threshold sits.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 1.05;

/// Sequential video pipeline: frame 0 runs cold, later frames warm-start
/// from the previous frame's weights and stop at the loss threshold.
pub fn extract_video<E: Element>(
    frames: &[MattingProblem<E>],
) -> Result<Vec<MatteResult<E>>, EngineError> {
    let first = frames.first().ok_or(EngineError::EmptyVideo)?;
    let (_, h, w) = first.image.shape.as_chw()?;
    for (i, f) in frames.iter().enumerate().skip(1) {
        let (_, fh, fw) = f.image.shape.as_chw()?;
        if (fh, fw) != (h, w) {
            return Err(EngineError::ResolutionChange { frame: i });
        }
    }

    let mut nets = build_networks(first)?;
    let mut results = Vec::with_capacity(frames.len());
    let cold = optimize(first, &mut nets, None, None)?;
    let cold_final = cold
        .loss_history
        .last()
        .map(|b| b.total)
        .unwrap_or(f64::INFINITY);
    results.push(cold);

    for frame in &frames[1..] {
        let threshold = frame
            .config
            .loss_threshold
            .unwrap_or(cold_final * DEFAULT_THRESHOLD_FACTOR);
        results.push(optimize(frame, &mut nets, Some(threshold), None)?);
    }
    Ok(results)
}
