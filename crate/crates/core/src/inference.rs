//! Sum-product belief propagation on the keypoint tree with convolutional
//! messages, mixture aggregation over the pool and the end-to-end predictor.
//!
//! A message from `i` to `j` is `M_ij = Γ^{i,j} ⊛ H_i`, where `H_i` is the
//! unary of `i` times every message into `i` except the one from `j`:
//!
//! ```text
//! M_ij[m, n] = Σ_{|Δm|,|Δn| <= r} Γ[r + Δm, r + Δn] · H_i[m + Δm, n + Δn]
//! ```
//!
//! Cells outside the grid contribute nothing. Every message is rescaled to
//! sum to one, which leaves the normalized marginals unchanged on a tree.

use crate::error::{Error, Result};
use crate::geometry::{GridRotation, Point2, Pose, RotationAngle};
use crate::grid::{weighted_sum, ConfidenceStack, Frame, Grid2D};
use crate::pool::{GraphicalModel, MixtureWeights, ModelPool, PairwiseKernel};
use crate::skeleton::SkeletonTree;

/// Floor applied to unaries before inference.
pub const UNARY_FLOOR: f64 = 1e-8;

/// Largest joint state space the enumeration oracle accepts.
pub const MAX_ENUMERATION: u128 = 10_000_000;

/// Accumulates `Γ ⊛ h` into `out` (zero padded, `Δ = sender - receiver`).
pub(crate) fn conv_accumulate(h: &[f64], height: usize, width: usize, kernel: &PairwiseKernel, out: &mut [f64]) {
    let r = kernel.radius() as isize;
    let (hh, ww) = (height as isize, width as isize);
    for dm in -r..=r {
        let m_lo = (-dm).max(0);
        let m_hi = (hh - dm).min(hh);
        for dn in -r..=r {
            let n_lo = (-dn).max(0);
            let n_hi = (ww - dn).min(ww);
            if m_lo >= m_hi || n_lo >= n_hi {
                continue;
            }
            let w = kernel.at(dm, dn);
            for m in m_lo..m_hi {
                let src = ((m + dm) * ww + dn + n_lo) as usize;
                let dst = (m * ww + n_lo) as usize;
                let len = (n_hi - n_lo) as usize;
                let (s, d) = (&h[src..src + len], &mut out[dst..dst + len]);
                for (o, v) in d.iter_mut().zip(s) {
                    *o += w * v;
                }
            }
        }
    }
}

/// Transpose of [`conv_accumulate`] in `h`, and the gradient with respect to the kernel.
pub(crate) fn conv_backward(
    h: &[f64],
    grad_out: &[f64],
    height: usize,
    width: usize,
    kernel: &PairwiseKernel,
    grad_h: &mut [f64],
    grad_kernel: &mut [f64],
) {
    let r = kernel.radius() as isize;
    let side = 2 * r + 1;
    let (hh, ww) = (height as isize, width as isize);
    for dm in -r..=r {
        let m_lo = (-dm).max(0);
        let m_hi = (hh - dm).min(hh);
        for dn in -r..=r {
            let n_lo = (-dn).max(0);
            let n_hi = (ww - dn).min(ww);
            if m_lo >= m_hi || n_lo >= n_hi {
                continue;
            }
            let w = kernel.at(dm, dn);
            let mut acc = 0.0;
            for m in m_lo..m_hi {
                let src = ((m + dm) * ww + dn + n_lo) as usize;
                let dst = (m * ww + n_lo) as usize;
                let len = (n_hi - n_lo) as usize;
                let g = &grad_out[dst..dst + len];
                let hs = &h[src..src + len];
                for (a, b) in g.iter().zip(hs) {
                    acc += a * b;
                }
                for (gh, gv) in grad_h[src..src + len].iter_mut().zip(g) {
                    *gh += w * gv;
                }
            }
            grad_kernel[((dm + r) * side + dn + r) as usize] += acc;
        }
    }
}

/// Raw message `Γ ⊛ h` before normalization.
pub fn convolve_message(h: &Grid2D, kernel: &PairwiseKernel) -> Grid2D {
    let mut out = vec![0.0; h.len()];
    conv_accumulate(h.values(), h.height(), h.width(), kernel, &mut out);
    Grid2D::from_raw(h.height(), h.width(), out)
}

/// Message from a sender with the given unary and incoming messages (from
/// every neighbor except the receiver), normalized to sum to one.
pub fn send_message(unary: &Grid2D, incoming: &[&Grid2D], kernel: &PairwiseKernel) -> Result<Grid2D> {
    let mut h = unary.values().to_vec();
    for m in incoming {
        unary.check_same_dims(m)?;
        for (a, b) in h.iter_mut().zip(m.values()) {
            *a *= b;
        }
    }
    let h = Grid2D::from_raw(unary.height(), unary.width(), h);
    if !(h.sum() > 0.0) {
        return Err(Error::Degenerate("sender belief is identically zero"));
    }
    convolve_message(&h, kernel).normalize()
}

/// Forward state of one model on one set of unaries, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Propagation {
    /// Per schedule slot: the sender product `H_i`.
    pub h: Vec<Vec<f64>>,
    /// Per slot: total mass of the raw convolution.
    pub conv_sum: Vec<f64>,
    /// Per slot: the stored message.
    pub msgs: Vec<Vec<f64>>,
    /// Per node: total mass of the unnormalized belief.
    pub belief_sum: Vec<f64>,
    /// Per node: the normalized marginal.
    pub marginals: Vec<Vec<f64>>,
}

fn product_except(
    tree: &SkeletonTree,
    msgs: &[Vec<f64>],
    unary: &[f64],
    node: usize,
    skip: &[usize],
) -> Vec<f64> {
    let mut out = unary.to_vec();
    for &k in tree.neighbors(node) {
        if skip.contains(&k) {
            continue;
        }
        let s = tree.slot(k, node).expect("neighbor slot");
        for (o, v) in out.iter_mut().zip(&msgs[s]) {
            *o *= v;
        }
    }
    out
}

/// Two-pass propagation over raw (already floored) unaries.
pub(crate) fn propagate(
    model: &GraphicalModel,
    unaries: &[Vec<f64>],
    tree: &SkeletonTree,
    height: usize,
    width: usize,
    normalize_messages: bool,
) -> Result<Propagation> {
    let slots = tree.schedule().len();
    let mut msgs = vec![Vec::new(); slots];
    let mut h_store = vec![Vec::new(); slots];
    let mut conv_sum = vec![0.0; slots];
    for (s, &(i, j)) in tree.schedule().sends().iter().enumerate() {
        let h = product_except(tree, &msgs, &unaries[i], i, &[j]);
        let mut out = vec![0.0; h.len()];
        conv_accumulate(&h, height, width, &model.kernels()[s], &mut out);
        let total: f64 = out.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate("message with zero or non-finite mass"));
        }
        if normalize_messages {
            for v in &mut out {
                *v /= total;
            }
        }
        conv_sum[s] = total;
        msgs[s] = out;
        h_store[s] = h;
    }
    let mut belief_sum = Vec::with_capacity(tree.len());
    let mut marginals = Vec::with_capacity(tree.len());
    for node in 0..tree.len() {
        let mut b = product_except(tree, &msgs, &unaries[node], node, &[]);
        let total: f64 = b.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate("belief with zero or non-finite mass"));
        }
        for v in &mut b {
            *v /= total;
        }
        belief_sum.push(total);
        marginals.push(b);
    }
    Ok(Propagation {
        h: h_store,
        conv_sum,
        msgs,
        belief_sum,
        marginals,
    })
}

fn check_inputs(model: &GraphicalModel, unaries: &ConfidenceStack, tree: &SkeletonTree) -> Result<()> {
    if unaries.len() != tree.len() {
        return Err(Error::LengthMismatch {
            what: "unary layers",
            expected: tree.len(),
            got: unaries.len(),
        });
    }
    if model.kernels().len() != tree.schedule().len() {
        return Err(Error::LengthMismatch {
            what: "model kernels",
            expected: tree.schedule().len(),
            got: model.kernels().len(),
        });
    }
    Ok(())
}

pub(crate) fn floored_values(unaries: &ConfidenceStack) -> Vec<Vec<f64>> {
    unaries
        .layers()
        .iter()
        .map(|g| g.values().iter().map(|&v| v.max(UNARY_FLOOR)).collect())
        .collect()
}

fn to_stack(marginals: Vec<Vec<f64>>, dims: (usize, usize), frame: Frame) -> ConfidenceStack {
    let layers = marginals
        .into_iter()
        .map(|v| Grid2D::from_raw(dims.0, dims.1, v))
        .collect();
    ConfidenceStack::new(layers, frame).expect("uniform dims")
}

/// Exact tree marginals by one leaf-to-root and one root-to-leaf sweep.
pub fn two_pass_marginals(
    model: &GraphicalModel,
    unaries: &ConfidenceStack,
    tree: &SkeletonTree,
) -> Result<ConfidenceStack> {
    check_inputs(model, unaries, tree)?;
    let (h, w) = unaries.dims();
    let p = propagate(model, &floored_values(unaries), tree, h, w, true)?;
    Ok(to_stack(p.marginals, (h, w), unaries.frame()))
}

/// Same sweep without rescaling messages; prone to underflow on large trees.
pub fn two_pass_marginals_unnormalized(
    model: &GraphicalModel,
    unaries: &ConfidenceStack,
    tree: &SkeletonTree,
) -> Result<ConfidenceStack> {
    check_inputs(model, unaries, tree)?;
    let (h, w) = unaries.dims();
    let p = propagate(model, &floored_values(unaries), tree, h, w, false)?;
    Ok(to_stack(p.marginals, (h, w), unaries.frame()))
}

/// Flooding schedule: every message is recomputed from the previous round's
/// messages, starting from uniform ones. Exact on a tree once `rounds`
/// reaches the tree diameter.
pub fn iterative_marginals(
    model: &GraphicalModel,
    unaries: &ConfidenceStack,
    tree: &SkeletonTree,
    rounds: usize,
) -> Result<ConfidenceStack> {
    check_inputs(model, unaries, tree)?;
    let (h, w) = unaries.dims();
    let phi = floored_values(unaries);
    let uniform = vec![1.0 / (h * w) as f64; h * w];
    let mut msgs = vec![uniform; tree.schedule().len()];
    for _ in 0..rounds {
        let mut next = Vec::with_capacity(msgs.len());
        for (s, &(i, j)) in tree.schedule().sends().iter().enumerate() {
            let hprod = product_except(tree, &msgs, &phi[i], i, &[j]);
            let mut out = vec![0.0; h * w];
            conv_accumulate(&hprod, h, w, &model.kernels()[s], &mut out);
            let total: f64 = out.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Degenerate("message with zero mass"));
            }
            out.iter_mut().for_each(|v| *v /= total);
            next.push(out);
        }
        msgs = next;
    }
    let marginals = (0..tree.len())
        .map(|node| {
            let b = product_except(tree, &msgs, &phi[node], node, &[]);
            let total: f64 = b.iter().sum();
            b.into_iter().map(|v| v / total).collect()
        })
        .collect();
    Ok(to_stack(marginals, (h, w), unaries.frame()))
}

/// Exact marginals by summing the unnormalized product over every joint
/// configuration. Each edge contributes the kernel of its direction pointing
/// toward the queried node; with tied kernels this is a single joint model.
pub fn brute_force_marginals(
    model: &GraphicalModel,
    unaries: &ConfidenceStack,
    tree: &SkeletonTree,
) -> Result<ConfidenceStack> {
    check_inputs(model, unaries, tree)?;
    let (h, w) = unaries.dims();
    let cells = h * w;
    let mut states: u128 = 1;
    for _ in 0..tree.len() {
        states = states.saturating_mul(cells as u128);
        if states > MAX_ENUMERATION {
            return Err(Error::StateSpaceTooLarge(states));
        }
    }
    let phi = floored_values(unaries);
    let k = tree.len();
    let mut out = Vec::with_capacity(k);
    for target in 0..k {
        // for each node v > 0 in enumeration order, the edges to earlier nodes
        // as (other node, kernel, v is the sender)
        let mut links: Vec<Vec<(usize, &PairwiseKernel, bool)>> = vec![Vec::new(); k];
        for &(p, c) in tree.edges() {
            let (late, early) = if p > c { (p, c) } else { (c, p) };
            // the endpoint farther from the target sends
            let late_sends = tree.path_length(late, target) > tree.path_length(early, target);
            let kernel = if late_sends {
                model.kernel(tree, late, early)
            } else {
                model.kernel(tree, early, late)
            }
            .expect("edge kernel");
            links[late].push((early, kernel, late_sends));
        }
        let mut acc = vec![0.0; cells];
        let mut assign = vec![0usize; k];
        enumerate(0, 1.0, &mut assign, &phi, &links, w, target, &mut acc);
        let total: f64 = acc.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("joint distribution has zero mass"));
        }
        out.push(acc.into_iter().map(|v| v / total).collect());
    }
    Ok(to_stack(out, (h, w), unaries.frame()))
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    v: usize,
    partial: f64,
    assign: &mut [usize],
    phi: &[Vec<f64>],
    links: &[Vec<(usize, &PairwiseKernel, bool)>],
    width: usize,
    target: usize,
    acc: &mut [f64],
) {
    if v == assign.len() {
        acc[assign[target]] += partial;
        return;
    }
    for x in 0..phi[v].len() {
        let mut f = partial * phi[v][x];
        for &(u, kernel, v_sends) in &links[v] {
            let (xs, xr) = if v_sends { (x, assign[u]) } else { (assign[u], x) };
            let dm = (xs / width) as isize - (xr / width) as isize;
            let dn = (xs % width) as isize - (xr % width) as isize;
            let r = kernel.radius() as isize;
            f *= if dm.abs() <= r && dn.abs() <= r { kernel.at(dm, dn) } else { 0.0 };
        }
        if f == 0.0 {
            continue;
        }
        assign[v] = x;
        enumerate(v + 1, f, assign, phi, links, width, target, acc);
    }
}

fn check_pool(pool: &ModelPool, weights: &MixtureWeights) -> Result<()> {
    if pool.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "mixture weights",
            expected: pool.len(),
            got: weights.len(),
        });
    }
    Ok(())
}

/// Per-model marginals in pool order.
pub fn per_model_marginals(
    pool: &ModelPool,
    unaries: &ConfidenceStack,
    tree: &SkeletonTree,
) -> Result<Vec<ConfidenceStack>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pool.models()
            .par_iter()
            .map(|m| two_pass_marginals(m, unaries, tree))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pool.models()
            .iter()
            .map(|m| two_pass_marginals(m, unaries, tree))
            .collect()
    }
}

/// `p(x_i) = Σ_l w_l p_l(x_i)` with a shared unary across the pool.
pub fn mixture_marginals(
    pool: &ModelPool,
    weights: &MixtureWeights,
    unaries: &ConfidenceStack,
    tree: &SkeletonTree,
) -> Result<ConfidenceStack> {
    check_pool(pool, weights)?;
    let per_model = per_model_marginals(pool, unaries, tree)?;
    let layers = (0..tree.len())
        .map(|k| {
            let grids: Vec<Grid2D> = per_model.iter().map(|s| s.layer(k).clone()).collect();
            weighted_sum(&grids, weights.as_slice())
        })
        .collect::<Result<Vec<_>>>()?;
    ConfidenceStack::new(layers, unaries.frame())
}

/// Final maps in the original frame and their argmax decoding.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub maps: ConfidenceStack,
    /// Argmax cell per keypoint, `(row, col)`.
    pub cells: Vec<(usize, usize)>,
    /// Argmax cells as grid-coordinate points.
    pub pose: Pose,
}

impl Prediction {
    pub fn from_maps(maps: ConfidenceStack) -> Self {
        let cells = maps.argmax_cells();
        let pose = Pose::new(cells.iter().map(|&c| Point2::from_cell(c)).collect());
        Prediction { maps, cells, pose }
    }
}

/// Rotate unaries into the canonical frame, run the mixture, rotate the
/// marginals back, renormalize and decode.
pub fn predict(
    unaries: &ConfidenceStack,
    angle: RotationAngle,
    pool: &ModelPool,
    weights: &MixtureWeights,
    tree: &SkeletonTree,
) -> Result<Prediction> {
    let (h, w) = unaries.dims();
    let forward = GridRotation::new(h, w, angle);
    let back = GridRotation::new(h, w, angle.neg());
    let rotated = forward.apply_stack(unaries, Frame::Rotated);
    let mixed = mixture_marginals(pool, weights, &rotated, tree)?;
    let layers = mixed
        .layers()
        .iter()
        .map(|g| back.apply(g).normalize())
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction::from_maps(ConfidenceStack::new(layers, Frame::Original)?))
}

/// Baseline decoding: argmax of each raw unary.
pub fn unary_argmax(unaries: &ConfidenceStack) -> Pose {
    Pose::new(unaries.argmax_cells().into_iter().map(Point2::from_cell).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::render_gaussian;
    use crate::pool::{init_uniform_pool, one_hot_weights, KERNEL_FLOOR};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row_kernel(left: f64, mid: f64, right: f64) -> PairwiseKernel {
        // only the Δm = 0 row matters on a one-row grid
        let f = KERNEL_FLOOR;
        PairwiseKernel::new(1, vec![f, f, f, left, mid, right, f, f, f]).unwrap()
    }

    fn stack(rows: &[&[f64]], frame: Frame) -> ConfidenceStack {
        let layers = rows.iter().map(|r| Grid2D::from_rows(&[r]).unwrap()).collect();
        ConfidenceStack::new(layers, frame).unwrap()
    }

    #[test]
    fn one_by_three_message() {
        let h = Grid2D::from_rows(&[&[1.0, 0.0, 0.0]]).unwrap();
        let k = row_kernel(0.2, 0.5, 0.3);
        let raw = convolve_message(&h, &k);
        assert_eq!(raw.values(), &[0.5, 0.2, 0.0]);
        let m = send_message(&h, &[], &k).unwrap();
        let want = [0.5 / 0.7, 0.2 / 0.7, 0.0];
        for (a, b) in m.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn leaf_message_uses_unary_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = Grid2D::new(3, 4, (0..12).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
        let k = PairwiseKernel::new(1, (0..9).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
        let ones = Grid2D::filled(3, 4, 1.0);
        assert_eq!(send_message(&u, &[], &k).unwrap(), send_message(&u, &[&ones], &k).unwrap());
    }

    #[test]
    fn full_radius_uniform_kernel_gives_uniform_message() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Grid2D::new(3, 4, (0..12).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
        let m = send_message(&u, &[], &PairwiseKernel::uniform(3)).unwrap();
        assert!(m.max_abs_diff(&Grid2D::uniform(3, 4)) < 1e-15);
        // smaller radius: proportional to local box sums
        let raw = convolve_message(&u, &PairwiseKernel::uniform(1));
        let box_sum = |m: isize, n: isize| {
            let mut s = 0.0;
            for a in m - 1..=m + 1 {
                for b in n - 1..=n + 1 {
                    if (0..3).contains(&a) && (0..4).contains(&b) {
                        s += u.get(a as usize, b as usize);
                    }
                }
            }
            s / 9.0
        };
        for m in 0..3 {
            for n in 0..4 {
                assert!((raw.get(m, n) - box_sum(m as isize, n as isize)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn send_message_errors() {
        let z = Grid2D::zeros(1, 3);
        assert!(matches!(send_message(&z, &[], &row_kernel(0.2, 0.5, 0.3)), Err(Error::Degenerate(_))));
        let u = Grid2D::filled(1, 3, 1.0);
        let other = Grid2D::filled(2, 3, 1.0);
        assert!(send_message(&u, &[&other], &row_kernel(0.2, 0.5, 0.3)).is_err());
    }

    fn two_node_instance() -> (SkeletonTree, GraphicalModel, ConfidenceStack) {
        let t = SkeletonTree::chain(2).unwrap();
        let k = row_kernel(0.1, 0.9, 0.1);
        let m = GraphicalModel::new(&t, vec![k.clone(), k]).unwrap();
        let u = stack(&[&[0.6, 0.4], &[0.5, 0.5]], Frame::Rotated);
        (t, m, u)
    }

    #[test]
    fn two_node_marginals() {
        let (t, m, u) = two_node_instance();
        for p in [two_pass_marginals(&m, &u, &t).unwrap(), brute_force_marginals(&m, &u, &t).unwrap()] {
            assert!((p.layer(0).values()[0] - 0.6).abs() < 1e-12);
            assert!((p.layer(0).values()[1] - 0.4).abs() < 1e-12);
            assert!((p.layer(1).values()[0] - 0.58).abs() < 1e-12);
            assert!((p.layer(1).values()[1] - 0.42).abs() < 1e-12);
        }
        let a = two_pass_marginals(&m, &u, &t).unwrap();
        let b = brute_force_marginals(&m, &u, &t).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn single_node_is_normalized_unary() {
        let t = SkeletonTree::new(1, 0, &[]).unwrap();
        let m = GraphicalModel::new(&t, vec![]).unwrap();
        let u = stack(&[&[1.0, 3.0]], Frame::Rotated);
        let want = [0.25, 0.75];
        for p in [two_pass_marginals(&m, &u, &t).unwrap(), brute_force_marginals(&m, &u, &t).unwrap()] {
            assert_eq!(p.layer(0).values(), &want);
        }
    }

    #[test]
    fn uniform_kernels_return_unaries() {
        let t = SkeletonTree::chain(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layers = (0..3)
            .map(|_| Grid2D::new(4, 4, (0..16).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap())
            .collect();
        let u = ConfidenceStack::new(layers, Frame::Rotated).unwrap();
        let m = GraphicalModel::uniform(&t, 3);
        let p = two_pass_marginals(&m, &u, &t).unwrap();
        for k in 0..3 {
            assert!(p.layer(k).max_abs_diff(&u.layer(k).normalize().unwrap()) <= 1e-12);
        }
        // uniform unaries too: uniform marginals
        let uu = ConfidenceStack::new(vec![Grid2D::uniform(4, 4); 3], Frame::Rotated).unwrap();
        let p = two_pass_marginals(&GraphicalModel::uniform(&t, 3), &uu, &t).unwrap();
        for k in 0..3 {
            assert!(p.layer(k).max_abs_diff(&Grid2D::uniform(4, 4)) <= 1e-15);
        }
    }

    #[test]
    fn star_enumeration_sums_to_one() {
        let t = SkeletonTree::new(3, 0, &[(0, 1), (0, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kernels = (0..4)
            .map(|_| PairwiseKernel::new(1, (0..9).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap())
            .collect();
        let m = GraphicalModel::new(&t, kernels).unwrap();
        let layers = (0..3)
            .map(|_| Grid2D::new(2, 2, (0..4).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap())
            .collect();
        let u = ConfidenceStack::new(layers, Frame::Rotated).unwrap();
        let p = brute_force_marginals(&m, &u, &t).unwrap();
        for l in p.layers() {
            assert!((l.sum() - 1.0).abs() < 1e-12);
        }
        assert!(p.max_abs_diff(&two_pass_marginals(&m, &u, &t).unwrap()) < 1e-12);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let t = SkeletonTree::chain(4).unwrap();
        let m = GraphicalModel::uniform(&t, 1);
        let u = ConfidenceStack::new(vec![Grid2D::uniform(8, 8); 4], Frame::Rotated).unwrap();
        assert!(matches!(brute_force_marginals(&m, &u, &t), Err(Error::StateSpaceTooLarge(_))));
    }

    #[test]
    fn flooding_matches_two_pass_after_diameter_rounds() {
        let t = SkeletonTree::chain(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kernels = (0..6)
            .map(|_| PairwiseKernel::new(2, (0..25).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap())
            .collect();
        let m = GraphicalModel::new(&t, kernels).unwrap();
        let layers = (0..4)
            .map(|_| Grid2D::new(5, 5, (0..25).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap())
            .collect();
        let u = ConfidenceStack::new(layers, Frame::Rotated).unwrap();
        let exact = two_pass_marginals(&m, &u, &t).unwrap();
        assert!(iterative_marginals(&m, &u, &t, 3).unwrap().max_abs_diff(&exact) < 1e-12);
        assert!(iterative_marginals(&m, &u, &t, 1).unwrap().max_abs_diff(&exact) > 1e-6);
    }

    #[test]
    fn predict_collapses_to_unary_argmax() {
        let t = SkeletonTree::chain(3).unwrap();
        let centers = [Point2::new(2.0, 3.0), Point2::new(5.0, 1.0), Point2::new(4.0, 6.0)];
        let layers = centers
            .iter()
            .map(|&c| render_gaussian(8, 8, c, 1.0, true).unwrap())
            .collect();
        let u = ConfidenceStack::new(layers, Frame::Original).unwrap();
        // full-grid radius: every message is exactly uniform
        let pool = init_uniform_pool(&t, 1, 7).unwrap();
        let w = one_hot_weights(1, 0).unwrap();
        let p = predict(&u, RotationAngle::from_degrees(0.0), &pool, &w, &t).unwrap();
        assert_eq!(p.pose, unary_argmax(&u));
        assert_eq!(p.maps.frame(), Frame::Original);
        for l in p.maps.layers() {
            assert!((l.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_weight_length_checked() {
        let t = SkeletonTree::chain(2).unwrap();
        let pool = init_uniform_pool(&t, 2, 1).unwrap();
        let u = ConfidenceStack::new(vec![Grid2D::uniform(2, 2); 2], Frame::Rotated).unwrap();
        assert!(mixture_marginals(&pool, &one_hot_weights(3, 0).unwrap(), &u, &t).is_err());
    }
}
