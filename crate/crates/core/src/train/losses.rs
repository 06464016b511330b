use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::network::DurationDomain;

/// Per-frame squared L2 distance averaged over frames:
/// `(1/l_v) Σ_i ‖z_a,i − z_t,i‖²`.
pub fn loss_dis<T: Real>(tape: &mut Tape<T>, z_t: Var, z_a: Var) -> Result<Var> {
    let width = tape.value(z_t).cols();
    let mse = tape.mse(z_t, z_a)?;
    tape.scale(mse, width as f64)
}

/// Sum of squared differences between raw predictions `[l_t, 1]` and the
/// ground-truth durations mapped into `domain`.
pub fn loss_dur<T: Real>(tape: &mut Tape<T>, predicted: Var, truth: &[usize], domain: DurationDomain) -> Result<Var> {
    let shape = tape.value(predicted).shape().to_vec();
    if shape != [truth.len(), 1] {
        return Err(Error::shape("loss_dur", &shape, &[truth.len(), 1]));
    }
    let target = Tensor::new(shape, truth.iter().map(|&d| T::of(domain.target(d))).collect())?;
    let target = tape.constant(target)?;
    let diff = tape.sub(predicted, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum(sq)
}

/// Symmetric InfoNCE over frames. Row `i` of `z_t` is paired with row `i` of
/// `z_a`; every other row of the other side is a negative. Similarities are
/// cosines divided by `temperature`.
pub fn loss_contrastive<T: Real>(tape: &mut Tape<T>, z_t: Var, z_a: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let (a, b) = (tape.value(z_t).shape().to_vec(), tape.value(z_a).shape().to_vec());
    if a != b {
        return Err(Error::shape("loss_contrastive", &a, &b));
    }
    let n = a[0];
    if n < 2 {
        return Err(Error::InvalidArgument("contrastive loss needs at least 2 frames".into()));
    }
    let nt = tape.row_normalize(z_t)?;
    let na = tape.row_normalize(z_a)?;
    let na_t = tape.transpose(na)?;
    let sim = tape.matmul(nt, na_t)?;
    let logits = tape.scale(sim, 1.0 / temperature)?;
    let logits_t = tape.transpose(logits)?;
    let eye = tape.constant(Tensor::identity(n))?;
    let mut terms = Vec::with_capacity(2);
    for l in [logits, logits_t] {
        let lp = tape.log_softmax(l)?;
        let diag = tape.mul(lp, eye)?;
        terms.push(tape.sum(diag)?);
    }
    let both = tape.add(terms[0], terms[1])?;
    tape.scale(both, -0.5 / n as f64)
}
