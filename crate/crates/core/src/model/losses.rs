use super::nets::{Generator, PerceptualNet, PIXEL_WEIGHT};
use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Var};

fn check_aligned<T: Element>(g: &Graph<T>, op: &str, a: Var, b: Var) -> Result<usize> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.len() != 2 || sa != sb {
        return Err(Error::Shape(format!("{op}: code matrices {sa:?} and {sb:?} are not row-aligned")));
    }
    if sa[0] == 0 {
        return Err(Error::Empty(format!("{op}: empty batch")));
    }
    Ok(sa[0])
}

/// Per-anchor normalized-temperature cross-entropy, shape `[B]`.
///
/// Anchor `i` scores its positive `zp[i]` against the candidates
/// `{zp[i]} ∪ {z[j] : j != i, groups[j] == groups[i]}`; with `groups = None`
/// every other row is a candidate. Excluded rows never reach the value or
/// the gradient of anchor `i`'s term.
pub fn contrastive_terms<T: Element>(
    g: &mut Graph<T>,
    z: Var,
    zp: Var,
    groups: Option<&[usize]>,
    tau: f64,
) -> Result<Var> {
    let b = check_aligned(g, "contrastive loss", z, zp)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if let Some(groups) = groups {
        if groups.len() != b {
            return Err(Error::Shape(format!("contrastive loss: {} labels for {b} codes", groups.len())));
        }
    }
    let prod = g.mul(z, zp)?;
    let pos = g.sum_axis(prod, 1)?;
    let pos_col = g.reshape(pos, &[b, 1])?;
    let sims = g.matmul_nt(z, z)?;
    let logits = g.concat(&[pos_col, sims], 1)?;
    let logits = g.scale(logits, 1.0 / tau);
    let mut mask = vec![false; b * (b + 1)];
    for i in 0..b {
        mask[i * (b + 1)] = true;
        for j in 0..b {
            mask[i * (b + 1) + 1 + j] = j != i && groups.is_none_or(|n| n[j] == n[i]);
        }
    }
    let lse = g.logsumexp(logits, 1, Some(mask))?;
    let pos_scaled = g.scale(pos, 1.0 / tau);
    g.sub(lse, pos_scaled)
}

/// Mean of [`contrastive_terms`] with negatives restricted to the anchor's domain.
pub fn contrastive_per_domain_loss<T: Element>(
    g: &mut Graph<T>,
    z: Var,
    zp: Var,
    nuisance: &[usize],
    tau: f64,
) -> Result<Var> {
    let terms = contrastive_terms(g, z, zp, Some(nuisance), tau)?;
    g.mean(terms)
}

/// Mean of [`contrastive_terms`] with every other batch row as a negative.
pub fn global_contrastive_loss<T: Element>(g: &mut Graph<T>, z: Var, zp: Var, tau: f64) -> Result<Var> {
    let terms = contrastive_terms(g, z, zp, None, tau)?;
    g.mean(terms)
}

/// `mean_i(-z_i . zp_i)`; the negative cosine for unit rows.
pub fn augmentation_loss<T: Element>(g: &mut Graph<T>, z: Var, zp: Var) -> Result<Var> {
    let b = check_aligned(g, "augmentation loss", z, zp)?;
    let prod = g.mul(z, zp)?;
    let total = g.sum(prod);
    Ok(g.scale(total, -1.0 / b as f64))
}

fn mse<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// Sum over feature layers of the feature MSE plus a weighted pixel MSE.
///
/// For equally sized images the batch value equals the mean of per-image values.
pub fn perceptual_loss<T: Element>(g: &mut Graph<T>, pnet: &PerceptualNet<T>, p: &[Var], x: Var, y: Var) -> Result<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(Error::Shape(format!(
            "perceptual loss: {:?} vs {:?}",
            g.shape(x),
            g.shape(y)
        )));
    }
    let fx = pnet.features(g, p, x)?;
    let fy = pnet.features(g, p, y)?;
    let pixel = mse(g, x, y)?;
    let mut total = g.scale(pixel, PIXEL_WEIGHT);
    for (a, b) in fx.into_iter().zip(fy) {
        let term = mse(g, a, b)?;
        total = g.add(total, term)?;
    }
    Ok(total)
}

/// Perceptual distance between `images` and `G(codes, nuisance)`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_loss<T: Element>(
    g: &mut Graph<T>,
    generator: &Generator<T>,
    gen_params: &[Var],
    pnet: &PerceptualNet<T>,
    pnet_params: &[Var],
    codes: Var,
    nuisance: &[usize],
    images: Var,
) -> Result<Var> {
    let recon = generator.forward(g, gen_params, codes, nuisance)?;
    perceptual_loss(g, pnet, pnet_params, images, recon)
}
