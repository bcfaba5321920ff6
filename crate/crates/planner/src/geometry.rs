//! Plane geometry for routing a piecewise-straight path around circular
//! keep-out disks and resampling polylines to uniform-speed waypoints.

pub type Point = (f64, f64);

pub fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Minimum distance from `c` to the segment [a, b].
pub fn point_segment_distance(c: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(c, a);
    }
    let s = (((c.0 - a.0) * dx + (c.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    dist(c, (a.0 + s * dx, a.1 + s * dy))
}

/// Whether the open segment (a, b) passes through the disk interior.
pub fn segment_crosses_disk(a: Point, b: Point, center: Point, radius: f64) -> bool {
    // A hair of slack so tangent segments produced by the detour
    // construction are not re-flagged as crossings.
    point_segment_distance(center, a, b) < radius - 1e-9
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetourError {
    #[error("detour around keep-out disk at ({x:.1}, {y:.1}) is not constructible: {reason}")]
    NotConstructible { x: f64, y: f64, reason: String },
    #[error("detour length {length:.1} m exceeds the reachable distance {reach:.1} m")]
    Unreachable { length: f64, reach: f64 },
}

/// Both tangent touch points on the circle as seen from an external point.
fn tangent_touch_points(p: Point, center: Point, radius: f64) -> Option<[Point; 2]> {
    let dx = p.0 - center.0;
    let dy = p.1 - center.1;
    let d = (dx * dx + dy * dy).sqrt();
    if d <= radius {
        return None;
    }
    let base = dy.atan2(dx);
    let half = (radius / d).acos();
    let at = |angle: f64| {
        (
            center.0 + radius * angle.cos(),
            center.1 + radius * angle.sin(),
        )
    };
    Some([at(base + half), at(base - half)])
}

/// Apex of the two tangent lines from `a` and `b` to the circle, on the given
/// side (`left = true` means left of the travel direction a -> b). Assumes
/// the segment [a, b] crosses the disk, which puts one touch point of each
/// endpoint strictly on either side of the travel line.
fn tangent_apex(a: Point, b: Point, center: Point, radius: f64, left: bool) -> Option<Point> {
    let dir = (b.0 - a.0, b.1 - a.1);
    let wanted = if left { 1.0 } else { -1.0 };
    let on_side =
        |q: Point| (dir.0 * (q.1 - a.1) - dir.1 * (q.0 - a.0)) * wanted > 0.0;
    let ta = tangent_touch_points(a, center, radius)?
        .into_iter()
        .find(|&q| on_side(q))?;
    let tb = tangent_touch_points(b, center, radius)?
        .into_iter()
        .find(|&q| on_side(q))?;
    line_intersection(a, ta, b, tb)
}

/// Intersection of lines (a1, a2) and (b1, b2).
fn line_intersection(a1: Point, a2: Point, b1: Point, b2: Point) -> Option<Point> {
    let r = (a2.0 - a1.0, a2.1 - a1.1);
    let s = (b2.0 - b1.0, b2.1 - b1.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-12 {
        return None;
    }
    let q = (b1.0 - a1.0, b1.1 - a1.1);
    let u = (q.0 * s.1 - q.1 * s.0) / denom;
    Some((a1.0 + u * r.0, a1.1 + u * r.1))
}

/// Length of a polyline.
pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Route a polyline around every disk its segments cross, inserting tangent
/// apex points. Disks are inflated by `radius` as passed; the chosen side is
/// the one with the shorter detour, ties going left of the travel direction.
pub fn route_around_disks(
    start: Point,
    finish: Point,
    disks: &[(Point, f64)],
    max_passes: usize,
) -> Result<Vec<Point>, DetourError> {
    let mut path = vec![start, finish];
    for _ in 0..max_passes {
        let mut changed = false;
        let mut i = 0;
        while i + 1 < path.len() {
            let (a, b) = (path[i], path[i + 1]);
            if let Some(&(center, radius)) = disks
                .iter()
                .find(|(c, r)| segment_crosses_disk(a, b, *c, *r))
            {
                let apex = best_apex(a, b, center, radius)?;
                path.insert(i + 1, apex);
                changed = true;
            }
            i += 1;
        }
        if !changed {
            return Ok(path);
        }
    }
    Err(DetourError::NotConstructible {
        x: start.0,
        y: start.1,
        reason: "routing did not settle; keep-out layout too intricate".into(),
    })
}

fn best_apex(a: Point, b: Point, center: Point, radius: f64) -> Result<Point, DetourError> {
    let not_constructible = |reason: &str| DetourError::NotConstructible {
        x: center.0,
        y: center.1,
        reason: reason.to_string(),
    };
    let left = tangent_apex(a, b, center, radius, true);
    let right = tangent_apex(a, b, center, radius, false);
    let len = |apex: Point| dist(a, apex) + dist(apex, b);
    match (left, right) {
        (Some(l), Some(r)) => {
            let (ll, rl) = (len(l), len(r));
            if ll <= rl + 1e-9 {
                Ok(l)
            } else {
                Ok(r)
            }
        }
        (Some(l), None) => Ok(l),
        (None, Some(r)) => Ok(r),
        (None, None) => Err(not_constructible(
            "an endpoint lies on or inside the inflated disk",
        )),
    }
}

/// Resample a polyline to `n_samples + 1` points at uniform arc-length
/// spacing. The first and last points are copied exactly.
pub fn resample_uniform(points: &[Point], n_samples: usize) -> Vec<Point> {
    assert!(points.len() >= 2 && n_samples >= 1);
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        cumulative.push(cumulative.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *cumulative.last().unwrap();
    let mut out = Vec::with_capacity(n_samples + 1);
    out.push(points[0]);
    if total == 0.0 {
        out.extend(std::iter::repeat(points[0]).take(n_samples - 1));
        out.push(*points.last().unwrap());
        return out;
    }
    let mut seg = 0;
    for i in 1..n_samples {
        let target = total * i as f64 / n_samples as f64;
        while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let frac = if seg_len > 0.0 {
            (target - cumulative[seg]) / seg_len
        } else {
            0.0
        };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push((a.0 + frac * (b.0 - a.0), a.1 + frac * (b.1 - a.1)));
    }
    out.push(*points.last().unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn segment_distance_basics() {
        assert_relative_eq!(
            point_segment_distance((0.0, 5.0), (-10.0, 0.0), (10.0, 0.0)),
            5.0
        );
        // Beyond the segment end the nearest point is the endpoint.
        assert_relative_eq!(
            point_segment_distance((20.0, 0.0), (-10.0, 0.0), (10.0, 0.0)),
            10.0
        );
        assert_relative_eq!(point_segment_distance((3.0, 4.0), (0.0, 0.0), (0.0, 0.0)), 5.0);
    }

    #[test]
    fn crossing_detection() {
        assert!(segment_crosses_disk((0.0, 0.0), (10.0, 0.0), (5.0, 1.0), 2.0));
        assert!(!segment_crosses_disk((0.0, 0.0), (10.0, 0.0), (5.0, 3.0), 2.0));
        // Tangent contact is not a crossing.
        assert!(!segment_crosses_disk((0.0, 0.0), (10.0, 0.0), (5.0, 2.0), 2.0));
    }

    #[test]
    fn clear_chord_is_untouched() {
        let path = route_around_disks((0.0, 0.0), (0.0, 1000.0), &[((450.0, 450.0), 150.0)], 8)
            .unwrap();
        assert_eq!(path, vec![(0.0, 0.0), (0.0, 1000.0)]);
    }

    #[test]
    fn blocked_chord_gets_tangent_apex() {
        let center = (450.0, 450.0);
        let radius = 150.0;
        let path =
            route_around_disks((0.0, 0.0), (800.0, 800.0), &[(center, radius)], 8).unwrap();
        assert_eq!(path.len(), 3);
        for w in path.windows(2) {
            assert!(
                point_segment_distance(center, w[0], w[1]) >= radius - 1e-6,
                "segment dips into the disk"
            );
        }
        // Tangency: the apex segments touch the inflated circle.
        let clearance: f64 = path
            .windows(2)
            .map(|w| point_segment_distance(center, w[0], w[1]))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(clearance, radius, epsilon = 1e-6);
    }

    #[test]
    fn symmetric_blockage_detours_left_of_travel() {
        // Circle dead-center on the chord: both sides tie; the tie-break is
        // left of the travel direction (+y travel => left is -x... the left
        // normal of (0,1) is (-1,0)).
        let path =
            route_around_disks((0.0, 0.0), (0.0, 1000.0), &[((0.0, 500.0), 100.0)], 8).unwrap();
        assert_eq!(path.len(), 3);
        assert!(
            path[1].0 < 0.0,
            "tie-break should go left of travel, got {:?}",
            path[1]
        );
    }

    #[test]
    fn two_disks_both_avoided() {
        let disks = [((300.0, 300.0), 150.0), ((700.0, 700.0), 150.0)];
        let path = route_around_disks((0.0, 0.0), (1000.0, 1000.0), &disks, 8).unwrap();
        assert!(path.len() >= 4);
        for w in path.windows(2) {
            for (c, r) in disks {
                assert!(point_segment_distance(c, w[0], w[1]) >= r - 1e-6);
            }
        }
    }

    #[test]
    fn endpoint_inside_disk_is_an_error() {
        let err =
            route_around_disks((0.0, 0.0), (0.0, 200.0), &[((0.0, 100.0), 150.0)], 8).unwrap_err();
        assert!(matches!(err, DetourError::NotConstructible { .. }));
    }

    #[test]
    fn resampling_preserves_endpoints_and_spacing() {
        let path = vec![(0.0, 0.0), (0.0, 600.0), (300.0, 600.0)];
        let samples = resample_uniform(&path, 9);
        assert_eq!(samples.len(), 10);
        assert_eq!(samples[0], (0.0, 0.0));
        assert_eq!(samples[9], (300.0, 600.0));
        let step = polyline_length(&path) / 9.0;
        for w in samples.windows(2) {
            assert_relative_eq!(dist(w[0], w[1]), step, max_relative = 1e-9);
        }
    }

    #[test]
    fn resampling_a_point_pair_is_linear_interpolation() {
        let samples = resample_uniform(&[(0.0, 0.0), (0.0, 1000.0)], 50);
        assert_eq!(samples.len(), 51);
        for (n, p) in samples.iter().enumerate() {
            assert_relative_eq!(p.1, 20.0 * n as f64, epsilon = 1e-9);
            assert_eq!(p.0, 0.0);
        }
    }

    #[test]
    fn degenerate_zero_length_polyline() {
        let samples = resample_uniform(&[(5.0, 5.0), (5.0, 5.0)], 4);
        assert_eq!(samples, vec![(5.0, 5.0); 5]);
    }
}
