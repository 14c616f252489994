//! Plate domains, clamped segments, uniform sampling and nested subdomains.

use rand::Rng;

use crate::error::{Error, Result};
use crate::Point;

const TOL: f64 = 1e-12;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.x1 > self.x0 && self.y1 > self.y0 && [self.x0, self.x1, self.y0, self.y1].iter().all(|v| v.is_finite())
    }

    /// Open-interior membership.
    pub fn contains_open(&self, p: Point) -> bool {
        p[0] > self.x0 && p[0] < self.x1 && p[1] > self.y0 && p[1] < self.y1
    }

    pub fn contains_closed(&self, p: Point) -> bool {
        p[0] >= self.x0 - TOL && p[0] <= self.x1 + TOL && p[1] >= self.y0 - TOL && p[1] <= self.y1 + TOL
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x0.max(other.x0),
            self.x1.min(other.x1),
            self.y0.max(other.y0),
            self.y1.min(other.y1),
        );
        r.is_valid().then_some(r)
    }

    /// `other` lies in the open interior of `self`.
    pub fn strictly_contains(&self, other: &Rect) -> bool {
        other.x0 > self.x0 && other.x1 < self.x1 && other.y0 > self.y0 && other.y1 < self.y1
    }

    pub fn edges(&self) -> [Segment; 4] {
        let (a, b, c, d) = ([self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]);
        [Segment::new(a, b), Segment::new(b, c), Segment::new(d, c), Segment::new(a, d)]
    }
}

/// Axis-aligned segment with `start <= end` along its varying coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        if a[0] < b[0] || (a[0] == b[0] && a[1] <= b[1]) {
            Segment { start: a, end: b }
        } else {
            Segment { start: b, end: a }
        }
    }

    /// 0 for a horizontal segment (x varies), 1 for a vertical one.
    pub fn varying_axis(&self) -> Option<usize> {
        let dx = self.end[0] - self.start[0];
        let dy = self.end[1] - self.start[1];
        match (dx.abs() > TOL, dy.abs() > TOL) {
            (true, false) => Some(0),
            (false, true) => Some(1),
            _ => None,
        }
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).abs() + (self.end[1] - self.start[1]).abs()
    }

    pub fn point_at(&self, t: f64) -> Point {
        [
            self.start[0] + t * (self.end[0] - self.start[0]),
            self.start[1] + t * (self.end[1] - self.start[1]),
        ]
    }

    /// `self` and `other` lie on the same line and `other` covers `self`.
    fn within(&self, other: &Segment) -> bool {
        let (Some(a), Some(b)) = (self.varying_axis(), other.varying_axis()) else {
            return false;
        };
        let fixed = 1 - a;
        a == b
            && (self.start[fixed] - other.start[fixed]).abs() <= TOL
            && self.start[a] >= other.start[a] - TOL
            && self.end[a] <= other.end[a] + TOL
    }

    /// Parts of `self` not covered by any segment of `cuts` on the same line.
    fn subtract(&self, cuts: &[Segment]) -> Vec<Segment> {
        let Some(axis) = self.varying_axis() else {
            return vec![];
        };
        let fixed = 1 - axis;
        let mut intervals: Vec<(f64, f64)> = cuts
            .iter()
            .filter(|c| c.varying_axis() == Some(axis) && (c.start[fixed] - self.start[fixed]).abs() <= TOL)
            .map(|c| (c.start[axis], c.end[axis]))
            .collect();
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pieces = vec![];
        let mut cursor = self.start[axis];
        let end = self.end[axis];
        for (lo, hi) in intervals {
            if lo > cursor + TOL {
                pieces.push((cursor, lo.min(end)));
            }
            cursor = cursor.max(hi);
        }
        if end > cursor + TOL {
            pieces.push((cursor, end));
        }
        pieces
            .into_iter()
            .filter(|(a, b)| b - a > TOL)
            .map(|(a, b)| {
                let mut p = self.start;
                let mut q = self.start;
                p[axis] = a;
                q[axis] = b;
                Segment::new(p, q)
            })
            .collect()
    }
}

/// Which part of the boundary to sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryPart {
    /// The clamped segments Γ_D.
    Clamped,
    /// ∂Ω ∖ Γ_D.
    Free,
    All,
}

/// A rectangle, optionally minus a rectangular hole, with clamped segments.
///
/// Domains built by [`PlateDomain::new`] have their hole strictly inside; the
/// subdomains produced by [`PlateDomain::decompose`] may have a hole that
/// reaches the outer boundary (it is stored clipped to `outer`).
#[derive(Clone, Debug, PartialEq)]
pub struct PlateDomain {
    pub outer: Rect,
    pub hole: Option<Rect>,
    pub clamp: Vec<Segment>,
}

impl PlateDomain {
    pub fn new(outer: Rect, hole: Option<Rect>, clamp: Vec<Segment>) -> Result<Self> {
        if !outer.is_valid() {
            return Err(Error::InvalidDomain(format!("degenerate outer rectangle {outer:?}")));
        }
        if let Some(h) = hole {
            if !h.is_valid() || !outer.strictly_contains(&h) {
                return Err(Error::InvalidDomain(format!("hole {h:?} is not strictly inside {outer:?}")));
            }
        }
        let domain = PlateDomain { outer, hole, clamp };
        let edges = domain.boundary_segments();
        for seg in &domain.clamp {
            if seg.varying_axis().is_none() {
                return Err(Error::InvalidDomain(format!("clamp segment {seg:?} is empty or not axis-aligned")));
            }
            if !edges.iter().any(|e| seg.within(e)) {
                return Err(Error::InvalidDomain(format!("clamp segment {seg:?} does not lie on the boundary")));
            }
        }
        Ok(domain)
    }

    pub fn rectangle(outer: Rect, clamp: Vec<Segment>) -> Result<Self> {
        Self::new(outer, None, clamp)
    }

    pub fn is_free(&self) -> bool {
        self.clamp.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.outer.area() - self.hole.and_then(|h| h.intersect(&self.outer)).map_or(0.0, |h| h.area())
    }

    pub fn contains(&self, p: Point) -> bool {
        self.outer.contains_closed(p) && !self.hole.is_some_and(|h| h.contains_open(p))
    }

    /// Outer edges and, for an interior hole, the hole edges.
    pub fn boundary_segments(&self) -> Vec<Segment> {
        let mut segs = self.outer.edges().to_vec();
        if let Some(h) = self.hole {
            if self.outer.strictly_contains(&h) {
                segs.extend(h.edges());
            }
        }
        segs
    }

    fn part_segments(&self, part: BoundaryPart) -> Vec<Segment> {
        match part {
            BoundaryPart::Clamped => self.clamp.clone(),
            BoundaryPart::All => self.boundary_segments(),
            BoundaryPart::Free => self
                .boundary_segments()
                .iter()
                .flat_map(|e| e.subtract(&self.clamp))
                .collect(),
        }
    }

    pub fn boundary_length(&self, part: BoundaryPart) -> f64 {
        self.part_segments(part).iter().map(Segment::length).sum()
    }

    /// `n` i.i.d. uniform points of Ω, by rejection from the outer rectangle.
    pub fn sample_interior<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        let o = &self.outer;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = [rng.random_range(o.x0..o.x1), rng.random_range(o.y0..o.y1)];
            if !self.hole.is_some_and(|h| h.contains_open(p)) {
                out.push(p);
            }
        }
        out
    }

    /// `n` points uniform by arclength on the chosen part of ∂Ω.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, part: BoundaryPart, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        let segs = self.part_segments(part);
        let total: f64 = segs.iter().map(Segment::length).sum();
        if segs.is_empty() || total <= 0.0 {
            return Err(Error::InvalidDomain(format!("boundary part {part:?} is empty")));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = rng.random_range(0.0..total);
            let mut chosen = segs[segs.len() - 1];
            for seg in &segs {
                if s < seg.length() {
                    chosen = *seg;
                    break;
                }
                s -= seg.length();
            }
            out.push(chosen.point_at(rng.random_range(0.0..1.0)));
        }
        Ok(out)
    }

    /// Restriction to `slab ∩ Ω`, keeping the clamp segments that touch the slab.
    fn restrict(&self, slab: &Rect) -> Option<PlateDomain> {
        let outer = self.outer.intersect(slab)?;
        let hole = self.hole.and_then(|h| h.intersect(&outer));
        let clamp = self
            .clamp
            .iter()
            .filter(|s| outer.contains_closed(s.start) && outer.contains_closed(s.end))
            .copied()
            .collect();
        Some(PlateDomain { outer, hole, clamp })
    }

    /// The axis and side from which pre-training slabs grow.
    ///
    /// A clamp on a vertical edge grows slabs along x₁ from that edge; a
    /// clamp only on horizontal edges grows them along x₂.
    fn growth_direction(&self) -> Result<(usize, bool)> {
        let o = &self.outer;
        let on = |seg: &Segment, axis: usize, c: f64| seg.varying_axis() == Some(1 - axis) && (seg.start[axis] - c).abs() <= TOL;
        for axis in [0, 1] {
            let (lo, hi) = if axis == 0 { (o.x0, o.x1) } else { (o.y0, o.y1) };
            if self.clamp.iter().any(|s| on(s, axis, lo)) {
                return Ok((axis, true));
            }
            if self.clamp.iter().any(|s| on(s, axis, hi)) {
                return Ok((axis, false));
            }
        }
        Err(Error::DecompositionUnsupported(
            "clamped segments must lie on the outer rectangle".into(),
        ))
    }

    /// Nested slabs `Ω₁ ⊂ … ⊂ Ωₙ = Ω` of equal width grown from the clamp side.
    pub fn decompose(&self, n: usize) -> Result<SubdomainChain> {
        if self.is_free() {
            return Err(Error::DecompositionUnsupported(
                "pre-training needs a clamped boundary".into(),
            ));
        }
        if n < 2 {
            return Err(Error::DecompositionUnsupported(format!("need at least 2 subdomains, got {n}")));
        }
        let (axis, from_low) = self.growth_direction()?;
        let o = self.outer;
        let (lo, hi) = if axis == 0 { (o.x0, o.x1) } else { (o.y0, o.y1) };
        let step = (hi - lo) / n as f64;
        let mut domains = Vec::with_capacity(n);
        for i in 1..=n {
            let mut slab = o;
            let reach = if i == n { hi - lo } else { step * i as f64 };
            match (axis, from_low) {
                (0, true) => slab.x1 = lo + reach,
                (0, false) => slab.x0 = hi - reach,
                (_, true) => slab.y1 = lo + reach,
                (_, false) => slab.y0 = hi - reach,
            }
            let sub = if i == n {
                self.clone()
            } else {
                self.restrict(&slab)
                    .ok_or_else(|| Error::DecompositionUnsupported(format!("slab {i} is empty")))?
            };
            domains.push(sub);
        }
        let first = &domains[0].outer;
        if !self.clamp.iter().all(|s| first.contains_closed(s.start) && first.contains_closed(s.end)) {
            return Err(Error::DecompositionUnsupported(
                "clamped boundary does not fit in the first subdomain".into(),
            ));
        }
        Ok(SubdomainChain { domains })
    }
}

/// Nested subdomains ending with the full domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdomainChain {
    pub domains: Vec<PlateDomain>,
}

impl SubdomainChain {
    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// The pre-training subdomains Ω₁ … Ωₙ₋₁.
    pub fn pretraining(&self) -> &[PlateDomain] {
        &self.domains[..self.domains.len().saturating_sub(1)]
    }
}

/// Ω = (−5, 5) × (−2, 2) clamped on {−5} × [−2, 2].
pub fn standard_plate() -> PlateDomain {
    PlateDomain::rectangle(
        Rect::new(-5.0, 5.0, -2.0, 2.0),
        vec![Segment::new([-5.0, -2.0], [-5.0, 2.0])],
    )
    .expect("valid standard plate")
}
