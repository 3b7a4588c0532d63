//! Incremental Bowyer–Watson triangulation returning the edge graph.
//!
//! Points are inserted in a grid snake order so the visibility walk used for
//! point location stays short. Co-circular configurations are resolved by
//! the strict in-circle test: a triangle joins the cavity only when the new
//! point lies strictly inside its circumcircle.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Clone, Copy)]
struct Tri {
    v: [usize; 3],
    // nb[k] is the triangle across the edge opposite v[k]
    nb: [usize; 3],
    alive: bool,
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when d lies strictly inside the circumcircle of the
/// counter-clockwise triangle abc.
fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Reject inputs with fewer than three points or coincident pairs.
pub fn check_points(points: &[[f64; 2]]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    for (i, p) in points.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::InvalidParameter(format!("point {i} is not finite")));
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
    for s in 0..order.len() {
        let i = order[s];
        for &j in &order[s + 1..] {
            if points[j][0] - points[i][0] > 1e-12 {
                break;
            }
            let dx = points[j][0] - points[i][0];
            let dy = points[j][1] - points[i][1];
            if (dx * dx + dy * dy).sqrt() <= 1e-12 {
                return Err(Error::DuplicatePoints(i.min(j), i.max(j)));
            }
        }
    }
    Ok(())
}

fn snake_order(points: &[[f64; 2]], lo: [f64; 2], span: f64) -> Vec<usize> {
    let n = points.len();
    let cells = ((n as f64 / 4.0).sqrt().ceil() as usize).max(1);
    let cell_of = |p: &[f64; 2]| {
        let cx = (((p[0] - lo[0]) / span) * cells as f64) as usize;
        let cy = (((p[1] - lo[1]) / span) * cells as f64) as usize;
        let (cx, cy) = (cx.min(cells - 1), cy.min(cells - 1));
        let cx = if cy % 2 == 0 { cx } else { cells - 1 - cx };
        (cy, cx)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (cell_of(&points[i]), i));
    order
}

/// Undirected Delaunay edges (i < j) among the input points.
pub fn delaunay_edges(points: &[[f64; 2]]) -> Result<Vec<(usize, usize)>> {
    check_points(points)?;
    let n = points.len();

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);

    if collinear(points) {
        return Ok(collinear_path(points));
    }

    let cx = 0.5 * (lo[0] + hi[0]);
    let cy = 0.5 * (lo[1] + hi[1]);
    let big = 1e3 * span;
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.push([cx - 2.0 * big, cy - big]);
    pts.push([cx + 2.0 * big, cy - big]);
    pts.push([cx, cy + 2.0 * big]);

    let mut tris: Vec<Tri> = Vec::with_capacity(4 * n + 8);
    tris.push(Tri {
        v: [n, n + 1, n + 2],
        nb: [NONE; 3],
        alive: true,
    });

    let mut last = 0usize;
    let mut in_cavity: Vec<bool> = Vec::new();
    let mut cavity: Vec<usize> = Vec::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut boundary: Vec<(usize, usize, usize)> = Vec::new();
    let mut created: Vec<usize> = Vec::new();

    for &pi in &snake_order(points, lo, span) {
        let p = pts[pi];
        let start = locate(&tris, &pts, last, p);

        cavity.clear();
        queue.clear();
        in_cavity.resize(tris.len(), false);
        in_cavity[start] = true;
        queue.push_back(start);
        while let Some(t) = queue.pop_front() {
            cavity.push(t);
            for k in 0..3 {
                let o = tris[t].nb[k];
                if o == NONE || in_cavity[o] {
                    continue;
                }
                let [a, b, c] = tris[o].v;
                if in_circle(pts[a], pts[b], pts[c], p) > 0.0 {
                    in_cavity[o] = true;
                    queue.push_back(o);
                }
            }
        }

        boundary.clear();
        for &t in &cavity {
            for k in 0..3 {
                let o = tris[t].nb[k];
                if o != NONE && in_cavity[o] {
                    continue;
                }
                let a = tris[t].v[(k + 1) % 3];
                let b = tris[t].v[(k + 2) % 3];
                boundary.push((a, b, o));
            }
        }
        for &t in &cavity {
            tris[t].alive = false;
            in_cavity[t] = false;
        }

        created.clear();
        for &(a, b, o) in &boundary {
            let id = tris.len();
            tris.push(Tri {
                v: [pi, a, b],
                nb: [o, NONE, NONE],
                alive: true,
            });
            if o != NONE {
                let [oa, ob, oc] = tris[o].v;
                for k in 0..3 {
                    let (x, y) = ([oa, ob, oc][(k + 1) % 3], [oa, ob, oc][(k + 2) % 3]);
                    if x == b && y == a {
                        tris[o].nb[k] = id;
                    }
                }
            }
            created.push(id);
        }
        for &t in &created {
            let [_, a, b] = tris[t].v;
            for &u in &created {
                let [_, ua, ub] = tris[u].v;
                if ua == b {
                    tris[t].nb[1] = u;
                }
                if ub == a {
                    tris[t].nb[2] = u;
                }
            }
        }
        last = *created.last().expect("cavity has a boundary");
    }

    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(3 * n);
    for t in tris.iter().filter(|t| t.alive) {
        if t.v.iter().any(|&v| v >= n) {
            continue;
        }
        for k in 0..3 {
            let (a, b) = (t.v[k], t.v[(k + 1) % 3]);
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.extend(hull_edges(points));
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

fn locate(tris: &[Tri], pts: &[[f64; 2]], from: usize, p: [f64; 2]) -> usize {
    let mut t = from;
    let limit = 4 * tris.len() + 16;
    'walk: for _ in 0..limit {
        let tri = &tris[t];
        for k in 0..3 {
            let a = pts[tri.v[(k + 1) % 3]];
            let b = pts[tri.v[(k + 2) % 3]];
            if orient(a, b, p) < 0.0 && tri.nb[k] != NONE {
                t = tri.nb[k];
                continue 'walk;
            }
        }
        return t;
    }
    // fall back to a scan when the walk cycles on degenerate geometry
    tris.iter()
        .enumerate()
        .filter(|(_, tri)| tri.alive)
        .find(|(_, tri)| {
            (0..3).all(|k| orient(pts[tri.v[(k + 1) % 3]], pts[tri.v[(k + 2) % 3]], p) >= 0.0)
        })
        .map(|(i, _)| i)
        .unwrap_or(from)
}

fn collinear(points: &[[f64; 2]]) -> bool {
    let a = points[0];
    let b = points
        .iter()
        .copied()
        .max_by(|p, q| dist2(a, *p).total_cmp(&dist2(a, *q)))
        .unwrap();
    let scale = dist2(a, b);
    points
        .iter()
        .all(|&c| orient(a, b, c).abs() <= 1e-14 * scale)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn collinear_path(points: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
    });
    let mut edges: Vec<(usize, usize)> = order
        .windows(2)
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .collect();
    edges.sort_unstable();
    edges
}

// Convex hull edges can be lost when a point sits in the thin sliver between
// a hull edge and the circle through it and a super-triangle vertex; hull
// edges always belong to the triangulation, so they are restored here.
fn hull_edges(points: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
    });
    let mut hull: Vec<usize> = Vec::new();
    for pass in 0..2 {
        let base = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(order.iter())
        } else {
            Box::new(order.iter().rev())
        };
        for &i in iter {
            while hull.len() >= base + 2
                && orient(
                    points[hull[hull.len() - 2]],
                    points[hull[hull.len() - 1]],
                    points[i],
                ) <= 0.0
            {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    let h = hull.len();
    let mut out = Vec::new();
    for s in 0..h {
        let (a, b) = (hull[s], hull[(s + 1) % h]);
        let (pa, pb) = (points[a], points[b]);
        let len2 = dist2(pa, pb);
        let blocked = points.iter().enumerate().any(|(c, &pc)| {
            if c == a || c == b {
                return false;
            }
            let t = ((pc[0] - pa[0]) * (pb[0] - pa[0]) + (pc[1] - pa[1]) * (pb[1] - pa[1])) / len2;
            t > 0.0 && t < 1.0 && orient(pa, pb, pc).abs() <= 1e-12 * len2
        });
        if !blocked {
            out.push((a.min(b), a.max(b)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Every triangle with an empty circumcircle contributes its edges.
    fn brute_force(points: &[[f64; 2]]) -> Vec<(usize, usize)> {
        let n = points.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (a, mut b, mut c) = (points[i], points[j], points[k]);
                    let o = orient(a, b, c);
                    if o.abs() < 1e-12 {
                        continue;
                    }
                    if o < 0.0 {
                        std::mem::swap(&mut b, &mut c);
                    }
                    let empty = (0..n)
                        .filter(|&m| m != i && m != j && m != k)
                        .all(|m| in_circle(a, b, c, points[m]) <= 0.0);
                    if empty {
                        edges.extend([(i, j), (i, k), (j, k)]);
                    }
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    #[test]
    fn triangle_is_complete() {
        let e = delaunay_edges(&[[0.0, 0.0], [1.0, 0.0], [0.3, 1.0]]).unwrap();
        assert_eq!(e, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn square_has_one_diagonal() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let e = delaunay_edges(&pts).unwrap();
        assert_eq!(e.len(), 5);
        let diag = e.contains(&(0, 2)) as usize + e.contains(&(1, 3)) as usize;
        assert_eq!(diag, 1);
    }

    #[test]
    fn too_few_and_duplicates() {
        assert!(matches!(
            delaunay_edges(&[[0.0, 0.0], [1.0, 1.0]]),
            Err(Error::TooFewPoints(2))
        ));
        assert!(matches!(
            delaunay_edges(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]),
            Err(Error::DuplicatePoints(0, 2))
        ));
    }

    #[test]
    fn collinear_points_form_a_path() {
        let pts = [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0], [3.0, 3.0]];
        assert_eq!(delaunay_edges(&pts).unwrap(), vec![(0, 2), (0, 3), (1, 2)]);
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = 5 + trial * 2;
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0])
                .collect();
            assert_eq!(delaunay_edges(&pts).unwrap(), brute_force(&pts), "trial {trial}");
        }
    }

    #[test]
    fn grid_points_keep_planar_bound() {
        let mut pts = Vec::new();
        for i in 0..12 {
            for j in 0..9 {
                pts.push([i as f64, j as f64]);
            }
        }
        let e = delaunay_edges(&pts).unwrap();
        let n = pts.len();
        assert!(e.len() <= 3 * n - 6);
        // every grid neighbour pair is an edge
        for i in 0..12 {
            for j in 0..9 {
                let a = i * 9 + j;
                if j + 1 < 9 {
                    assert!(e.contains(&(a, a + 1)));
                }
                if i + 1 < 12 {
                    assert!(e.contains(&(a, a + 9)));
                }
            }
        }
    }
}
