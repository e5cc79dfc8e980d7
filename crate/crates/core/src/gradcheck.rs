//! End-to-end finite-difference check of the training loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{relative_error, Graph, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::losses::total_loss_logits_node;
use crate::network::{forward_logits, CascadeConfig, ModelParams};
use crate::tensor::Tensor;
use crate::training::synth_sample;

/// Finite-difference check of the total loss against every parameter tensor.
///
/// The loss is taken on logits, as in training. Evaluated on probabilities,
/// `1 - p` keeps only absolute precision near `p = 1` and the roundoff in the
/// loss swamps small gradient entries.
///
/// Relu and max pooling make the loss only piecewise smooth, and a central
/// difference straddling a kink does not approximate the gradient. A probed
/// coordinate is therefore used only if every relu sign and every max-pool
/// argmax agree at `w - h`, `w` and `w + h`; otherwise another coordinate of
/// the same tensor is drawn. An instance that cannot supply
/// `coords_per_tensor` smooth coordinates for every tensor sits too close to
/// a kink and is replaced by the next seeded instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelGradcheck {
    pub instances: usize,
    /// Square input side, a multiple of 32.
    pub image_size: usize,
    /// Smooth coordinates compared per parameter tensor (all of them if the tensor is smaller).
    pub coords_per_tensor: usize,
    /// Draws per wanted coordinate before an instance is rejected.
    pub max_draws_per_coord: usize,
    /// Candidate instances tried per accepted instance before giving up.
    pub max_candidates_per_instance: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for ModelGradcheck {
    fn default() -> Self {
        Self {
            instances: 20,
            image_size: 32,
            coords_per_tensor: 3,
            max_draws_per_coord: 16,
            max_candidates_per_instance: 4,
            step: DEFAULT_STEP,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradcheckReport {
    pub max_relative_error: f64,
    /// Description of the worst coordinate.
    pub worst: String,
    /// Accepted instances.
    pub instances: usize,
    /// Instances rejected for sitting within one step of a kink.
    pub rejected_instances: usize,
    /// Coordinates compared over the accepted instances.
    pub checked: usize,
    /// Draws skipped because `w +- h` crossed a kink.
    pub kink_rejections: usize,
}

impl ModelGradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_relative_error < tolerance
    }
}

type Branches = Vec<(usize, Vec<usize>)>;

fn evaluate(cfg: &CascadeConfig, params: &ModelParams, image: &Tensor, label: &Tensor) -> Result<(f64, Branches)> {
    let mut graph = Graph::new();
    // trainable, so that the piecewise ops are recorded with their branches
    let bound = params.bind(&mut graph, true);
    let x = graph.constant(image.clone());
    let logits = forward_logits(&mut graph, x, cfg, &bound)?;
    let (_, value) = total_loss_logits_node(&mut graph, logits, label)?;
    Ok((value.total, graph.branches()))
}

struct InstanceResult {
    max_relative_error: f64,
    worst: String,
    checked: usize,
    kink_rejections: usize,
}

/// `None` if some tensor ran out of smooth coordinates.
fn check_instance(
    cfg: &CascadeConfig,
    opts: &ModelGradcheck,
    candidate: u64,
) -> Result<(Option<InstanceResult>, usize)> {
    let size = opts.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(candidate);
    let mut params = ModelParams::init(cfg, rng.gen())?;
    let sample = synth_sample(rng.gen(), 0, size);
    let (image, label) = (sample.image, sample.mask.to_tensor());

    let mut graph = Graph::new();
    let bound = params.bind(&mut graph, true);
    let x = graph.constant(image.clone());
    let logits = forward_logits(&mut graph, x, cfg, &bound)?;
    let (loss, _) = total_loss_logits_node(&mut graph, logits, &label)?;
    let base = graph.branches();
    graph.backward(loss)?;
    let grads = bound.gradients(&graph);

    let mut out = InstanceResult { max_relative_error: 0.0, worst: String::new(), checked: 0, kink_rejections: 0 };
    let ids: Vec<String> = params.iter().map(|(id, _)| id.to_string()).collect();
    for id in ids {
        let numel = params.get(&id).map_or(0, |t| t.data().len());
        let want = opts.coords_per_tensor.min(numel);
        let mut order: Vec<usize> = (0..numel).collect();
        order.shuffle(&mut rng);
        order.truncate(want * opts.max_draws_per_coord);
        let mut accepted = 0;
        for k in order {
            if accepted == want {
                break;
            }
            let original = params.get(&id).expect("listed id").data()[k];
            let mut at = |v: f64| {
                params.get_mut(&id).expect("listed id").data_mut()[k] = v;
                evaluate(cfg, &params, &image, &label)
            };
            let plus = at(original + opts.step);
            let minus = at(original - opts.step);
            params.get_mut(&id).expect("listed id").data_mut()[k] = original;
            let ((plus, bp), (minus, bm)) = (plus?, minus?);
            if bp != base || bm != base {
                out.kink_rejections += 1;
                continue;
            }
            accepted += 1;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = grads.get(&id).map_or(0.0, |g| g.data()[k]);
            let err = relative_error(analytic, numeric);
            out.checked += 1;
            if err > out.max_relative_error || out.worst.is_empty() {
                out.max_relative_error = err;
                out.worst = format!("{id}[{k}] in instance {candidate}: analytic {analytic:e}, numeric {numeric:e}");
            }
        }
        if accepted < want {
            return Ok((None, out.kink_rejections));
        }
    }
    let rejections = out.kink_rejections;
    Ok((Some(out), rejections))
}

/// Each instance draws fresh parameters and a synthetic sample, then compares
/// central differences with backprop on sampled coordinates of every
/// parameter tensor.
pub fn model_gradcheck(cfg: &CascadeConfig, opts: &ModelGradcheck) -> Result<ModelGradcheckReport> {
    if !(opts.step > 0.0)
        || opts.instances == 0
        || opts.coords_per_tensor == 0
        || opts.max_draws_per_coord == 0
        || opts.max_candidates_per_instance == 0
    {
        return Err(Error::invalid("gradcheck", format!("bad options {opts:?}")));
    }
    let mut report = ModelGradcheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        instances: 0,
        rejected_instances: 0,
        checked: 0,
        kink_rejections: 0,
    };
    let budget = (opts.instances * opts.max_candidates_per_instance) as u64;
    for candidate in 0..budget {
        if report.instances == opts.instances {
            break;
        }
        let (result, rejections) = check_instance(cfg, opts, candidate)?;
        report.kink_rejections += rejections;
        let Some(r) = result else {
            report.rejected_instances += 1;
            continue;
        };
        report.instances += 1;
        report.checked += r.checked;
        if r.max_relative_error > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = r.max_relative_error;
            report.worst = r.worst;
        }
    }
    if report.instances < opts.instances {
        return Err(Error::invalid(
            "gradcheck",
            format!(
                "only {} of {} instances were smooth enough within {budget} candidates",
                report.instances, opts.instances
            ),
        ));
    }
    Ok(report)
}
