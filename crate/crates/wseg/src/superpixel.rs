//! SLIC superpixels, seed-to-region propagation, and the neighbour-voting
//! spatial regularization, composed into the pseudo-label generator.
//!
//! SLIC here is the grayscale variant: localized k-means over
//! (intensity, x, y) with distance D² = (scale·ΔI)² + m²·(d_xy/S)², where S
//! is the grid spacing and m the compactness. Raw intensities are scaled by
//! `intensity_scale` (default 100) so the usual m = 10 behaves like the
//! LAB-space original.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{Image, LabelMask, PseudoLabel, SeedMap};
use crate::surface::{mask_seeds, SurfaceCurve};

/// Superpixel assignment plus the region adjacency graph.
#[derive(Debug, Clone)]
pub struct SuperpixelMap {
    h: usize,
    w: usize,
    labels: Vec<u32>,
    n_regions: usize,
    /// Sorted neighbour ids per region; symmetric and irreflexive.
    adjacency: Vec<Vec<u32>>,
}

impl SuperpixelMap {
    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    #[inline]
    pub fn region_at(&self, r: usize, c: usize) -> u32 {
        self.labels[r * self.w + c]
    }

    /// Builds a map from explicit labels (used by tests and by callers that
    /// already have a segmentation): compacts ids, derives adjacency.
    pub fn from_labels(h: usize, w: usize, labels: Vec<u32>) -> Result<SuperpixelMap> {
        if labels.len() != h * w {
            return Err(Error::shape("SuperpixelMap::from_labels", h * w, labels.len()));
        }
        let (labels, n_regions) = compact_labels(labels);
        let adjacency = build_adjacency(&labels, h, w, n_regions);
        Ok(SuperpixelMap {
            h,
            w,
            labels,
            n_regions,
            adjacency,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicConfig {
    pub n_segments: usize,
    pub compactness: f64,
    pub max_iter: usize,
    pub intensity_scale: f64,
}

impl SlicConfig {
    /// Default region budget of ~200 pixels per superpixel.
    pub fn for_image(h: usize, w: usize) -> SlicConfig {
        SlicConfig {
            n_segments: (h * w).div_ceil(200).max(2),
            compactness: 10.0,
            max_iter: 10,
            intensity_scale: 100.0,
        }
    }
}

struct Center {
    y: f64,
    x: f64,
    intensity: f64,
}

/// Grayscale SLIC with connectivity enforcement.
pub fn slic(image: &Image, cfg: &SlicConfig) -> Result<SuperpixelMap> {
    let (h, w) = (image.height(), image.width());
    if cfg.n_segments < 2 {
        return Err(Error::InvalidConfig(format!(
            "slic needs at least 2 segments, got {}",
            cfg.n_segments
        )));
    }
    if cfg.n_segments > h * w {
        return Err(Error::InvalidConfig(format!(
            "slic asked for {} segments on a {}-pixel image",
            cfg.n_segments,
            h * w
        )));
    }
    let spacing = ((h * w) as f64 / cfg.n_segments as f64).sqrt();
    let ny = ((h as f64 / spacing).round() as usize).max(1);
    let nx = ((w as f64 / spacing).round() as usize).max(1);
    let mut centers: Vec<Center> = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let y = (i as f64 + 0.5) * h as f64 / ny as f64;
            let x = (j as f64 + 0.5) * w as f64 / nx as f64;
            let intensity = image.get(
                (y.round() as usize).min(h - 1),
                (x.round() as usize).min(w - 1),
            );
            centers.push(Center { y, x, intensity });
        }
    }

    let m2_over_s2 = (cfg.compactness * cfg.compactness) / (spacing * spacing);
    let mut assign = vec![u32::MAX; h * w];
    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..cfg.max_iter {
        dist.fill(f64::INFINITY);
        for (ci, center) in centers.iter().enumerate() {
            let r0 = (center.y - spacing).floor().max(0.0) as usize;
            let r1 = ((center.y + spacing).ceil() as usize).min(h - 1);
            let c0 = (center.x - spacing).floor().max(0.0) as usize;
            let c1 = ((center.x + spacing).ceil() as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let di = cfg.intensity_scale * (image.get(r, c) - center.intensity);
                    let dy = r as f64 - center.y;
                    let dx = c as f64 - center.x;
                    let d = di * di + (dy * dy + dx * dx) * m2_over_s2;
                    let px = r * w + c;
                    if d < dist[px] {
                        dist[px] = d;
                        assign[px] = ci as u32;
                    }
                }
            }
        }
        // pixels outside every window (possible at extreme aspect ratios)
        // fall back to the nearest center by full search
        for r in 0..h {
            for c in 0..w {
                let px = r * w + c;
                if assign[px] == u32::MAX {
                    let mut best = f64::INFINITY;
                    for (ci, center) in centers.iter().enumerate() {
                        let di = cfg.intensity_scale * (image.get(r, c) - center.intensity);
                        let dy = r as f64 - center.y;
                        let dx = c as f64 - center.x;
                        let d = di * di + (dy * dy + dx * dx) * m2_over_s2;
                        if d < best {
                            best = d;
                            assign[px] = ci as u32;
                        }
                    }
                }
            }
        }
        // recompute centers as the mean of their members, in pixel scan order
        let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for r in 0..h {
            for c in 0..w {
                let ci = assign[r * w + c] as usize;
                let a = &mut acc[ci];
                a.0 += r as f64;
                a.1 += c as f64;
                a.2 += image.get(r, c);
                a.3 += 1;
            }
        }
        for (center, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                center.y = a.0 / a.3 as f64;
                center.x = a.1 / a.3 as f64;
                center.intensity = a.2 / a.3 as f64;
            }
        }
    }

    let merged = enforce_connectivity(&assign, h, w);
    let (labels, n_regions) = compact_labels(merged);
    let adjacency = build_adjacency(&labels, h, w, n_regions);
    Ok(SuperpixelMap {
        h,
        w,
        labels,
        n_regions,
        adjacency,
    })
}

/// Connected-component labeling (4-connectivity) in scan order.
fn connected_components(labels: &[u32], h: usize, w: usize) -> (Vec<u32>, usize) {
    let mut comp = vec![u32::MAX; h * w];
    let mut n = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = n;
        n += 1;
        comp[start] = id;
        stack.push(start);
        while let Some(px) = stack.pop() {
            let (r, c) = (px / w, px % w);
            let mut try_push = |nr: usize, nc: usize| {
                let np = nr * w + nc;
                if comp[np] == u32::MAX && labels[np] == labels[px] {
                    comp[np] = id;
                    stack.push(np);
                }
            };
            if r > 0 {
                try_push(r - 1, c);
            }
            if c > 0 {
                try_push(r, c - 1);
            }
            if c + 1 < w {
                try_push(r, c + 1);
            }
            if r + 1 < h {
                try_push(r + 1, c);
            }
        }
    }
    (comp, n as usize)
}

/// Keeps each cluster's largest fragment and unions every other fragment
/// into its largest adjacent region (by current size; ties to the smaller
/// id), which keeps every final region 4-connected.
fn enforce_connectivity(assign: &[u32], h: usize, w: usize) -> Vec<u32> {
    let (comp, n_comp) = connected_components(assign, h, w);
    let mut comp_size = vec![0usize; n_comp];
    let mut comp_cluster = vec![0u32; n_comp];
    for (px, &cid) in comp.iter().enumerate() {
        comp_size[cid as usize] += 1;
        comp_cluster[cid as usize] = assign[px];
    }
    // the largest component of each cluster id survives as-is
    let mut main_of_cluster: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
    for cid in 0..n_comp as u32 {
        let cluster = comp_cluster[cid as usize];
        match main_of_cluster.get(&cluster) {
            Some(&m) if comp_size[m as usize] >= comp_size[cid as usize] => {}
            _ => {
                main_of_cluster.insert(cluster, cid);
            }
        }
    }
    // component adjacency (4-connected borders)
    let mut comp_adj: Vec<std::collections::BTreeSet<u32>> = vec![Default::default(); n_comp];
    for r in 0..h {
        for c in 0..w {
            let a = comp[r * w + c];
            if c + 1 < w {
                let b = comp[r * w + c + 1];
                if a != b {
                    comp_adj[a as usize].insert(b);
                    comp_adj[b as usize].insert(a);
                }
            }
            if r + 1 < h {
                let b = comp[(r + 1) * w + c];
                if a != b {
                    comp_adj[a as usize].insert(b);
                    comp_adj[b as usize].insert(a);
                }
            }
        }
    }
    // union-find with size tracking
    let mut parent: Vec<u32> = (0..n_comp as u32).collect();
    let mut size = comp_size.clone();
    fn find(parent: &mut [u32], x: u32) -> u32 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        let mut cur = x;
        while parent[cur as usize] != root {
            let next = parent[cur as usize];
            parent[cur as usize] = root;
            cur = next;
        }
        root
    }
    for cid in 0..n_comp as u32 {
        if main_of_cluster[&comp_cluster[cid as usize]] == cid {
            continue;
        }
        let own = find(&mut parent, cid);
        let mut best: Option<u32> = None;
        for &nb in &comp_adj[cid as usize] {
            let root = find(&mut parent, nb);
            if root == own {
                continue;
            }
            best = match best {
                None => Some(root),
                Some(b) => {
                    if size[root as usize] > size[b as usize]
                        || (size[root as usize] == size[b as usize] && root < b)
                    {
                        Some(root)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        if let Some(target) = best {
            parent[own as usize] = target;
            size[target as usize] += size[own as usize];
        }
    }
    comp.iter().map(|&cid| {
        let mut root = cid;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        root
    }).collect()
}

/// Renumbers labels to a dense 0..n range in scan order of first occurrence.
fn compact_labels(labels: Vec<u32>) -> (Vec<u32>, usize) {
    let mut remap: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
    let mut next = 0u32;
    let out = labels
        .iter()
        .map(|&l| {
            *remap.entry(l).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect();
    (out, next as usize)
}

fn build_adjacency(labels: &[u32], h: usize, w: usize, n_regions: usize) -> Vec<Vec<u32>> {
    let mut sets: Vec<std::collections::BTreeSet<u32>> = vec![Default::default(); n_regions];
    for r in 0..h {
        for c in 0..w {
            let a = labels[r * w + c];
            if c + 1 < w {
                let b = labels[r * w + c + 1];
                if a != b {
                    sets[a as usize].insert(b);
                    sets[b as usize].insert(a);
                }
            }
            if r + 1 < h {
                let b = labels[(r + 1) * w + c];
                if a != b {
                    sets[a as usize].insert(b);
                    sets[b as usize].insert(a);
                }
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Labels a whole superpixel adipose if any of its pixels carries a seed.
pub fn propagate_seeds(seeds: &SeedMap, sp: &SuperpixelMap) -> Result<PseudoLabel> {
    if seeds.height() != sp.h || seeds.width() != sp.w {
        return Err(Error::shape(
            "propagate_seeds",
            format!("{}x{}", sp.h, sp.w),
            format!("{}x{}", seeds.height(), seeds.width()),
        ));
    }
    let mut region_class = vec![0u8; sp.n_regions];
    for (px, &seeded) in seeds.marks().iter().enumerate() {
        if seeded {
            region_class[sp.labels[px] as usize] = 1;
        }
    }
    let mut out = LabelMask::zeros(sp.h, sp.w);
    for (px, &l) in sp.labels.iter().enumerate() {
        out.classes_mut()[px] = region_class[l as usize];
    }
    Ok(out)
}

/// Per-region classes of a region-constant pseudo label.
fn region_classes(pseudo: &PseudoLabel, sp: &SuperpixelMap) -> Vec<u8> {
    let mut classes = vec![0u8; sp.n_regions];
    for (px, &l) in sp.labels.iter().enumerate() {
        classes[l as usize] = pseudo.classes()[px];
    }
    classes
}

/// Synchronous neighbour-voting cleanup: a region flips to the other class
/// when at least `flip_fraction` of its adjacent regions carry it. Runs to a
/// fixpoint or `max_rounds`, whichever comes first.
pub fn spatial_regularize(
    pseudo: &PseudoLabel,
    sp: &SuperpixelMap,
    flip_fraction: f64,
    max_rounds: usize,
) -> PseudoLabel {
    let mut classes = region_classes(pseudo, sp);
    for _ in 0..max_rounds {
        let mut next = classes.clone();
        let mut changed = false;
        for (rid, neighbours) in sp.adjacency.iter().enumerate() {
            if neighbours.is_empty() {
                continue;
            }
            let opposite = neighbours
                .iter()
                .filter(|&&nb| classes[nb as usize] != classes[rid])
                .count();
            // small slack so exact-threshold counts (e.g. 4 of 5 at 0.8)
            // are not lost to the binary representation of the fraction
            if opposite as f64 >= flip_fraction * neighbours.len() as f64 - 1e-9 {
                next[rid] = 1 - classes[rid];
                changed = true;
            }
        }
        classes = next;
        if !changed {
            break;
        }
    }
    let mut out = LabelMask::zeros(sp.h, sp.w);
    for (px, &l) in sp.labels.iter().enumerate() {
        out.classes_mut()[px] = classes[l as usize];
    }
    out
}

/// Knobs of the composed pseudo-label generator.
#[derive(Debug, Clone)]
pub struct PseudoConfig {
    pub margin: usize,
    pub slic: SlicConfig,
    pub flip_fraction: f64,
    pub max_rounds: usize,
    pub skip_masking: bool,
    pub skip_regularization: bool,
}

impl PseudoConfig {
    pub fn for_image(h: usize, w: usize) -> PseudoConfig {
        PseudoConfig {
            margin: 6,
            slic: SlicConfig::for_image(h, w),
            flip_fraction: 0.8,
            max_rounds: 10,
            skip_masking: false,
            skip_regularization: false,
        }
    }
}

/// Every intermediate of the pseudo-label pipeline, kept for inspection
/// exports and the ablation reports.
#[derive(Debug, Clone)]
pub struct PseudoStages {
    pub seeds_raw: SeedMap,
    pub seeds_masked: SeedMap,
    pub superpixels: SuperpixelMap,
    pub initial: PseudoLabel,
    pub regularized: PseudoLabel,
    pub final_label: PseudoLabel,
}

/// Runs seed masking → SLIC → propagation → regularization and forces the
/// background above the surface to class 0.
pub fn generate_pseudo_stages(
    image: &Image,
    seeds: &SeedMap,
    surface: &SurfaceCurve,
    cfg: &PseudoConfig,
) -> Result<PseudoStages> {
    let seeds_masked = if cfg.skip_masking {
        seeds.clone()
    } else {
        mask_seeds(seeds, surface, cfg.margin)
    };
    let superpixels = slic(image, &cfg.slic)?;
    let initial = propagate_seeds(&seeds_masked, &superpixels)?;
    let regularized = if cfg.skip_regularization {
        initial.clone()
    } else {
        spatial_regularize(&initial, &superpixels, cfg.flip_fraction, cfg.max_rounds)
    };
    let mut final_label = regularized.clone();
    for c in 0..final_label.width() {
        for r in 0..surface.rows[c].min(final_label.height()) {
            final_label.set(r, c, 0);
        }
    }
    Ok(PseudoStages {
        seeds_raw: seeds.clone(),
        seeds_masked,
        superpixels,
        initial,
        regularized,
        final_label,
    })
}

pub fn generate_pseudo_labels(
    image: &Image,
    seeds: &SeedMap,
    surface: &SurfaceCurve,
    cfg: &PseudoConfig,
) -> Result<PseudoLabel> {
    Ok(generate_pseudo_stages(image, seeds, surface, cfg)?.final_label)
}

/// Fraction of truth boundary pixels with a superpixel boundary within
/// `tolerance` (Chebyshev distance). Used to validate that superpixels
/// respect the adipose contours.
pub fn boundary_recall(sp: &SuperpixelMap, truth: &LabelMask, tolerance: usize) -> f64 {
    let (h, w) = (truth.height(), truth.width());
    let is_truth_boundary = |r: usize, c: usize| {
        let v = truth.get(r, c);
        if v == 0 {
            return false;
        }
        (r > 0 && truth.get(r - 1, c) == 0)
            || (r + 1 < h && truth.get(r + 1, c) == 0)
            || (c > 0 && truth.get(r, c - 1) == 0)
            || (c + 1 < w && truth.get(r, c + 1) == 0)
    };
    let is_region_boundary = |r: usize, c: usize| {
        let l = sp.region_at(r, c);
        (r > 0 && sp.region_at(r - 1, c) != l)
            || (r + 1 < h && sp.region_at(r + 1, c) != l)
            || (c > 0 && sp.region_at(r, c - 1) != l)
            || (c + 1 < w && sp.region_at(r, c + 1) != l)
    };
    let mut total = 0usize;
    let mut hit = 0usize;
    let t = tolerance as isize;
    for r in 0..h {
        for c in 0..w {
            if !is_truth_boundary(r, c) {
                continue;
            }
            total += 1;
            'search: for dr in -t..=t {
                for dc in -t..=t {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr >= 0
                        && cc >= 0
                        && (rr as usize) < h
                        && (cc as usize) < w
                        && is_region_boundary(rr as usize, cc as usize)
                    {
                        hit += 1;
                        break 'search;
                    }
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Randomized seed map for property tests.
pub fn random_seed_map(h: usize, w: usize, density: f64, rng: &mut impl Rng) -> SeedMap {
    let mut seeds = SeedMap::empty(h, w);
    for px in 0..h * w {
        if rng.gen_bool(density) {
            seeds.marks_mut()[px] = true;
        }
    }
    seeds
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_gives_grid_cells() {
        let img = Image::from_fn(60, 60, |_, _| 0.5);
        let cfg = SlicConfig {
            n_segments: 9,
            compactness: 10.0,
            max_iter: 10,
            intensity_scale: 100.0,
        };
        let sp = slic(&img, &cfg).unwrap();
        assert_eq!(sp.n_regions(), 9);
        let mut sizes = vec![0usize; sp.n_regions()];
        for &l in sp.labels() {
            sizes[l as usize] += 1;
        }
        for &s in &sizes {
            assert!(s * 2 >= 400 && s <= 800, "size {s} outside [200, 800]");
        }
    }

    #[test]
    fn two_tone_split_lands_on_the_boundary() {
        let img = Image::from_fn(20, 40, |_, c| if c < 20 { 0.2 } else { 0.8 });
        let cfg = SlicConfig {
            n_segments: 2,
            compactness: 10.0,
            max_iter: 10,
            intensity_scale: 100.0,
        };
        let sp = slic(&img, &cfg).unwrap();
        assert_eq!(sp.n_regions(), 2);
        for r in 0..20 {
            for c in 0..40 {
                let want = sp.region_at(r, 0) != sp.region_at(r, 39);
                assert!(want);
                if !(19..=20).contains(&c) {
                    let expect = if c < 20 {
                        sp.region_at(r, 0)
                    } else {
                        sp.region_at(r, 39)
                    };
                    assert_eq!(sp.region_at(r, c), expect, "({r},{c})");
                }
            }
        }
    }

    #[test]
    fn regions_are_four_connected_and_cover_all_ids() {
        let img = Image::from_fn(48, 80, |r, c| {
            ((r as f64 * 0.7).sin() * (c as f64 * 0.3).cos() + 1.0) / 2.0
        });
        let sp = slic(&img, &SlicConfig::for_image(48, 80)).unwrap();
        let mut seen = vec![false; sp.n_regions()];
        for &l in sp.labels() {
            seen[l as usize] = true;
        }
        assert!(seen.iter().all(|&s| s), "not every region id occurs");
        // each region is one connected component
        let (comp, n_comp) = connected_components(sp.labels(), 48, 80);
        let mut comp_of_region = vec![u32::MAX; sp.n_regions()];
        for (px, &cid) in comp.iter().enumerate() {
            let rid = sp.labels()[px] as usize;
            if comp_of_region[rid] == u32::MAX {
                comp_of_region[rid] = cid;
            } else {
                assert_eq!(comp_of_region[rid], cid, "region {rid} is fragmented");
            }
        }
        assert_eq!(n_comp, sp.n_regions());
        // adjacency is symmetric and irreflexive
        for (rid, nbs) in sp.adjacency().iter().enumerate() {
            for &nb in nbs {
                assert_ne!(nb as usize, rid);
                assert!(sp.adjacency()[nb as usize].contains(&(rid as u32)));
            }
        }
    }

    #[test]
    fn assignment_is_optimal_on_small_images() {
        // at convergence every pixel sits with its argmin center; verified
        // against exhaustive search over regions on a 16×16 image
        let img = Image::from_fn(16, 16, |r, c| ((r / 8) as f64 * 0.6 + (c / 8) as f64 * 0.3) + 0.05);
        let cfg = SlicConfig {
            n_segments: 4,
            compactness: 10.0,
            max_iter: 20,
            intensity_scale: 100.0,
        };
        let sp = slic(&img, &cfg).unwrap();
        // recover converged region statistics (mean intensity & position)
        let mut stats = vec![(0.0, 0.0, 0.0, 0usize); sp.n_regions()];
        for r in 0..16 {
            for c in 0..16 {
                let s = &mut stats[sp.region_at(r, c) as usize];
                s.0 += r as f64;
                s.1 += c as f64;
                s.2 += img.get(r, c);
                s.3 += 1;
            }
        }
        let spacing = (256.0f64 / 4.0).sqrt();
        let m2s2 = 100.0 / (spacing * spacing);
        for r in 0..16 {
            for c in 0..16 {
                let mine = sp.region_at(r, c) as usize;
                let d_of = |s: &(f64, f64, f64, usize)| {
                    let n = s.3 as f64;
                    let di = 100.0 * (img.get(r, c) - s.2 / n);
                    let dy = r as f64 - s.0 / n;
                    let dx = c as f64 - s.1 / n;
                    di * di + (dy * dy + dx * dx) * m2s2
                };
                let mind = d_of(&stats[mine]);
                for (other, s) in stats.iter().enumerate() {
                    if other != mine {
                        assert!(
                            d_of(s) >= mind - 1e-9,
                            "pixel ({r},{c}) prefers region {other}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn slic_rejects_bad_segment_counts() {
        let img = Image::zeros(32, 32);
        let mut cfg = SlicConfig::for_image(32, 32);
        cfg.n_segments = 1;
        assert!(slic(&img, &cfg).is_err());
        cfg.n_segments = 32 * 32 + 1;
        assert!(slic(&img, &cfg).is_err());
    }

    fn striped_map() -> SuperpixelMap {
        // two bands of 3 cells each on a 6×9 grid
        let mut labels = vec![0u32; 54];
        for r in 0..6 {
            for c in 0..9 {
                let band = r / 3;
                let cell = c / 3;
                labels[r * 9 + c] = (band * 3 + cell) as u32;
            }
        }
        SuperpixelMap::from_labels(6, 9, labels).unwrap()
    }

    #[test]
    fn propagation_matches_any_seed_oracle() {
        let sp = striped_map();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let seeds = random_seed_map(6, 9, 0.08, &mut rng);
            let pseudo = propagate_seeds(&seeds, &sp).unwrap();
            // oracle: region positive iff any seed inside
            for rid in 0..sp.n_regions() {
                let any = (0..54).any(|px| sp.labels()[px] as usize == rid && seeds.marks()[px]);
                for px in 0..54 {
                    if sp.labels()[px] as usize == rid {
                        assert_eq!(pseudo.classes()[px] == 1, any);
                    }
                }
            }
        }
        // empty seeds → all zero
        let empty = SeedMap::empty(6, 9);
        assert!(!propagate_seeds(&empty, &sp).unwrap().any_positive());
        // one seed → exactly that region
        let mut one = SeedMap::empty(6, 9);
        one.set(1, 1, true);
        let pseudo = propagate_seeds(&one, &sp).unwrap();
        assert_eq!(pseudo.positive_count(), 9);
        assert_eq!(pseudo.get(0, 0), 1);
        assert_eq!(pseudo.get(0, 4), 0);
    }

    /// Region layout giving the center region exactly five neighbours:
    /// three cells above, one on each side.
    fn five_neighbour_map() -> SuperpixelMap {
        let mut labels = vec![0u32; 2 * 6 * 12];
        for r in 0..6 {
            for c in 0..12 {
                labels[r * 12 + c] = (c / 4) as u32; // A=0, B=1, C=2
            }
        }
        for r in 6..12 {
            for c in 0..12 {
                labels[r * 12 + c] = match c {
                    0..=1 => 3,  // D
                    10..=11 => 4, // E
                    _ => 5,      // X spans columns 2..10, touching A, B, C
                };
            }
        }
        SuperpixelMap::from_labels(12, 12, labels).unwrap()
    }

    #[test]
    fn eighty_percent_rule_includes_equality() {
        let sp = five_neighbour_map();
        // region ids after compaction: read them off representative pixels
        let x = sp.region_at(6, 5);
        let a = sp.region_at(0, 0);
        let b = sp.region_at(0, 5);
        let c = sp.region_at(0, 10);
        let d = sp.region_at(6, 0);
        assert_eq!(sp.adjacency()[x as usize].len(), 5);
        // 4 of 5 neighbours opposite → flips
        let mut pseudo = LabelMask::zeros(12, 12);
        for (px, &l) in sp.labels().iter().enumerate() {
            if [a, b, c, d].contains(&l) {
                pseudo.classes_mut()[px] = 1;
            }
        }
        let out = spatial_regularize(&pseudo, &sp, 0.8, 10);
        let x_px = 6 * 12 + 5;
        assert_eq!(out.classes()[x_px], 1, "4/5 opposite neighbours must flip");
        // 3 of 5 → stays
        let mut pseudo = LabelMask::zeros(12, 12);
        for (px, &l) in sp.labels().iter().enumerate() {
            if [a, b, c].contains(&l) {
                pseudo.classes_mut()[px] = 1;
            }
        }
        let out = spatial_regularize(&pseudo, &sp, 0.8, 10);
        assert_eq!(out.classes()[x_px], 0, "3/5 opposite neighbours must not flip");
    }

    #[test]
    fn checkerboard_oscillation_terminates_at_round_cap() {
        // 4×4 grid of square regions, 2-colored: every region's neighbours
        // are all opposite, so the whole map flips each round forever
        let mut labels = vec![0u32; 16 * 16];
        for r in 0..16 {
            for c in 0..16 {
                labels[r * 16 + c] = ((r / 4) * 4 + c / 4) as u32;
            }
        }
        let sp = SuperpixelMap::from_labels(16, 16, labels).unwrap();
        let mut pseudo = LabelMask::zeros(16, 16);
        for (px, &l) in sp.labels().iter().enumerate() {
            let (row, col) = (l / 4, l % 4);
            if (row + col) % 2 == 0 {
                pseudo.classes_mut()[px] = 1;
            }
        }
        // even number of rounds returns the original coloring, odd the flip
        let even = spatial_regularize(&pseudo, &sp, 0.8, 10);
        assert_eq!(even.classes(), pseudo.classes());
        let odd = spatial_regularize(&pseudo, &sp, 0.8, 9);
        for (a, b) in odd.classes().iter().zip(pseudo.classes()) {
            assert_eq!(*a, 1 - *b);
        }
    }

    #[test]
    fn regularization_preserves_region_constancy() {
        let img = Image::from_fn(48, 64, |r, c| ((r + 2 * c) % 17) as f64 / 17.0);
        let sp = slic(&img, &SlicConfig::for_image(48, 64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seeds = random_seed_map(48, 64, 0.02, &mut rng);
        let pseudo = propagate_seeds(&seeds, &sp).unwrap();
        let out = spatial_regularize(&pseudo, &sp, 0.8, 10);
        let mut class_of = vec![u8::MAX; sp.n_regions()];
        for (px, &l) in sp.labels().iter().enumerate() {
            let c = &mut class_of[l as usize];
            if *c == u8::MAX {
                *c = out.classes()[px];
            } else {
                assert_eq!(*c, out.classes()[px], "region {l} not constant");
            }
        }
    }

    #[test]
    fn pseudo_pipeline_keeps_background_clear() {
        let img = Image::from_fn(64, 64, |r, _| if r < 12 { 0.05 } else { 0.8 });
        let surface = SurfaceCurve {
            rows: vec![12; 64],
            margin: 6,
        };
        let mut seeds = SeedMap::empty(64, 64);
        seeds.set(3, 10, true); // background seed: must not survive
        seeds.set(40, 30, true);
        let cfg = PseudoConfig::for_image(64, 64);
        let stages = generate_pseudo_stages(&img, &seeds, &surface, &cfg).unwrap();
        for c in 0..64 {
            for r in 0..12 {
                assert_eq!(stages.final_label.get(r, c), 0);
            }
        }
        // no seeds at all → all-zero labels
        let empty = SeedMap::empty(64, 64);
        let out = generate_pseudo_labels(&img, &empty, &surface, &cfg).unwrap();
        assert!(!out.any_positive());
    }
}
