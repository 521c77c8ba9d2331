//! Central finite differences as an independent oracle for tape gradients.

use rand::Rng as _;

use crate::data::synth::{default_entities, default_locations, entity_token};
use crate::data::{gen_single_fact, Dataset, RawStory, Story, PAD, PLACEHOLDER};
use crate::error::{Error, Result};
use crate::memory::Mode;
use crate::model::{loss_and_grad, story_loss_kinks, InputStyle, ModelConfig, ModelParams, Slot};
use crate::rng::{self, streams};
use crate::tensor::{lit, Activation, Real, Tensor};

/// Where the largest disagreement was found.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
    /// Perturbed evaluations that moved a ReLU/PReLU input across zero.
    /// Only the model-level check counts these.
    pub kink_crossings: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients against `(f(p+ε) − f(p−ε)) / 2ε` for every
/// coordinate of every tensor in `params`.
pub fn finite_diff_check<T, F>(
    mut f: F,
    params: &[Tensor<T>],
    analytic: &[Tensor<T>],
    eps: T,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&[Tensor<T>]) -> Result<T>,
{
    if eps <= T::zero() {
        return Err(Error::Argument("finite difference step must be positive".into()));
    }
    if params.len() != analytic.len() {
        return Err(Error::Argument("one analytic gradient per parameter required".into()));
    }
    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut worst: Option<WorstCoordinate> = None;
    let mut max_err = 0f64;
    let two_eps = eps + eps;

    let mut eval = |w: &[Tensor<T>]| -> Result<T> {
        let v = f(w)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective returned {v}")));
        }
        Ok(v)
    };

    for (pi, (p, a)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != a.shape() {
            return Err(Error::dim("finite_diff_check", p.shape(), a.shape()));
        }
        let mut local = 0f64;
        for i in 0..p.len() {
            let orig = p.data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;

            let numeric = ((up - down) / two_eps).to_f64().unwrap();
            let an = a.data()[i].to_f64().unwrap();
            let err = relative_error(an, numeric);
            local = local.max(err);
            if worst.is_none() || err > max_err {
                max_err = err;
                worst = Some(WorstCoordinate {
                    param: pi,
                    index: i,
                    analytic: an,
                    numeric,
                });
            }
        }
        per_param.push(local);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error: max_err,
        worst,
        kink_crossings: 0,
    })
}

/// Numeric gradient alone, for callers that only need the oracle side.
pub fn numeric_gradient<T, F>(mut f: F, params: &[Tensor<T>], eps: T) -> Result<Vec<Tensor<T>>>
where
    T: Real,
    F: FnMut(&[Tensor<T>]) -> Result<T>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    let half: T = lit(0.5);
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].shape());
        for i in 0..params[pi].len() {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let up = f(&work)?;
            work[pi].data_mut()[i] = orig - eps;
            let down = f(&work)?;
            work[pi].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) * half / eps;
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest model that the model-level check accepts.
pub const MAX_DIM: usize = 8;
pub const MAX_BLOCKS: usize = 4;

const MAX_DRAWS: usize = 1000;

/// A small model, its f64 parameters and a few 3-step stories.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub config: ModelConfig,
    pub params: ModelParams<f64>,
    pub stories: Vec<Story>,
}

/// Three-entity stories whose single sentence yields exactly three windows.
fn window_stories(seed: u64, n: usize) -> Vec<RawStory> {
    let mut rng = rng::stream(seed, streams::CONTENT);
    let verbs = ["met", "called", "saw"];
    (0..n)
        .map(|_| {
            let mut ids = [0usize, 1, 2];
            for i in (1..3).rev() {
                ids.swap(i, rng.gen_range(0..=i));
            }
            let [a, b, c] = ids.map(entity_token);
            let v = verbs[rng.gen_range(0..verbs.len())];
            let words = |xs: &[&str]| xs.iter().map(|w| w.to_string()).collect::<Vec<_>>();
            RawStory {
                sentences: vec![words(&[&a, v, &b, "near", &c, "."])],
                question: words(&[&a, v, PLACEHOLDER, "?"]),
                answer: b,
                supporting: vec![0],
                candidates: Some((0..3).map(entity_token).collect()),
            }
        })
        .collect()
}

/// Builds a `dim × blocks` model over three-step stories in the given style.
/// Both activations are set to `phi`; a small L2 term keeps the penalty path covered.
///
/// Central differences only estimate the derivative where the function is
/// smooth across `[p − ε, p + ε]`, so points are redrawn until no perturbation
/// flips the sign of a ReLU/PReLU input. The selection never looks at the error.
pub fn fixture(
    mode: Mode,
    phi: Activation,
    input_style: InputStyle,
    dim: usize,
    blocks: usize,
    seed: u64,
) -> Result<Fixture> {
    if dim > MAX_DIM || blocks > MAX_BLOCKS {
        return Err(Error::Usage(format!(
            "gradient check needs dim <= {MAX_DIM} and blocks <= {MAX_BLOCKS}"
        )));
    }
    let raw = match input_style {
        InputStyle::Sentences => {
            gen_single_fact(seed, 2, &default_entities(3), &default_locations(3), 3)?
        }
        InputStyle::Windows(_) => window_stories(seed, 2),
    };
    let data = Dataset::from_raw(&raw, &raw[..1], &raw[..1], usize::MAX)?;
    let mut config = ModelConfig {
        dim,
        blocks,
        mode,
        input_style,
        phi_cell: phi,
        phi_out: phi,
        l2: 1e-3,
        dropout: 0.0,
        seed,
        ..ModelConfig::default()
    };
    let data = crate::training::prepare(&data, &mut config)?;
    let mut rng = rng::stream(seed, streams::INIT);
    for _ in 0..MAX_DRAWS {
        let params = random_point(&config, &mut rng)?;
        let probe = check_model(&params, &data.train, &config, FIXTURE_EPS)?;
        if probe.kink_crossings == 0 {
            return Ok(Fixture {
                config,
                params,
                stories: data.train,
            });
        }
    }
    Err(Error::Numeric(format!(
        "no point within {MAX_DRAWS} draws keeps every perturbation off the activation kinks"
    )))
}

/// Perturbation used when selecting fixture points.
pub const FIXTURE_EPS: f64 = 1e-3;

/// Weights uniform in (−0.5, 0.5), masks in (0.5, 1.5), slopes in (0.1, 0.4),
/// PAD embedding zero.
pub fn random_point(config: &ModelConfig, rng: &mut rng::Rng) -> Result<ModelParams<f64>> {
    let tensors = Slot::ALL
        .into_iter()
        .map(|slot| {
            let shape = ModelParams::<f64>::expected_shape(config, slot);
            let (lo, hi) = match slot {
                Slot::SentenceMask | Slot::QuestionMask => (0.5, 1.5),
                Slot::CellSlope | Slot::OutSlope => (0.1, 0.4),
                _ => (-0.5, 0.5),
            };
            let n = shape.iter().product();
            let mut t = Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())?;
            if slot == Slot::Embedding {
                t.row_mut(PAD).fill(0.0);
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::from_tensors(tensors)
}

/// Checks the tape gradient of the mean story loss against finite differences.
pub fn check_model(
    params: &ModelParams<f64>,
    stories: &[Story],
    config: &ModelConfig,
    eps: f64,
) -> Result<GradCheckReport> {
    check_model_with(params, stories, config, eps, |_| {})
}

/// As [`check_model`], with `tweak` applied to the analytic gradients first.
pub fn check_model_with(
    params: &ModelParams<f64>,
    stories: &[Story],
    config: &ModelConfig,
    eps: f64,
    tweak: impl FnOnce(&mut [Tensor<f64>]),
) -> Result<GradCheckReport> {
    if stories.is_empty() {
        return Err(Error::Argument("gradient check needs at least one story".into()));
    }
    if config.dim > MAX_DIM || config.blocks > MAX_BLOCKS {
        return Err(Error::Usage(format!(
            "gradient check needs dim <= {MAX_DIM} and blocks <= {MAX_BLOCKS}"
        )));
    }
    let weight = 1.0 / stories.len() as f64;
    let mut grads = params.zeros_like();
    for s in stories {
        loss_and_grad(params, s, config, None, weight, &mut grads)?;
    }
    tweak(&mut grads);
    let signs = |xs: &[f64]| xs.iter().map(|&x| x > 0.0).collect::<Vec<_>>();
    let base = stories
        .iter()
        .map(|s| Ok(signs(&story_loss_kinks(params, s, config)?.1)))
        .collect::<Result<Vec<_>>>()?;
    let mut crossings = 0;
    let objective = |w: &[Tensor<f64>]| -> Result<f64> {
        let p = ModelParams::from_tensors(w.to_vec())?;
        let mut total = 0.0;
        let mut crossed = false;
        for (s, b) in stories.iter().zip(&base) {
            let (loss, xs) = story_loss_kinks(&p, s, config)?;
            crossed |= signs(&xs) != *b;
            total += loss;
        }
        crossings += usize::from(crossed);
        Ok(total * weight)
    };
    let mut report = finite_diff_check(objective, params.tensors(), &grads, eps)?;
    report.kink_crossings = crossings;
    Ok(report)
}
