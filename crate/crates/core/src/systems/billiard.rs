use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, SystemKind};
use crate::integrators::PhaseState;

/// Binary wall image, `1` on walls and `0` in free space, indexed `[y][x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WallImage {
    size: usize,
    data: Vec<f64>,
}

impl WallImage {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.size + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Pixel-space geometry of the box and the mapping to state coordinates.
///
/// States live in world units of `pixels_per_unit` pixels with the origin at
/// the image centre, so both coordinates of the billiard stay within about
/// ±1.6. Gravity and launch speeds are given in pixels per second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilliardWorld {
    pub image_size: usize,
    pub wall: usize,
    pub ball: usize,
    pub pixels_per_unit: f64,
    pub gravity_px: f64,
    pub speed_px: (f64, f64),
    #[serde(skip)]
    image: Option<WallImage>,
}

impl Default for BilliardWorld {
    fn default() -> Self {
        Self::new(128, 12, 3, 32.0, 20.0, (20.0, 60.0))
    }
}

impl BilliardWorld {
    pub fn new(
        image_size: usize,
        wall: usize,
        ball: usize,
        pixels_per_unit: f64,
        gravity_px: f64,
        speed_px: (f64, f64),
    ) -> Self {
        let mut w = Self {
            image_size,
            wall,
            ball,
            pixels_per_unit,
            gravity_px,
            speed_px,
            image: None,
        };
        w.image = Some(w.render());
        w
    }

    /// Restores the cached image after deserialisation.
    pub fn rebuilt(self) -> Self {
        Self::new(
            self.image_size,
            self.wall,
            self.ball,
            self.pixels_per_unit,
            self.gravity_px,
            self.speed_px,
        )
    }

    fn render(&self) -> WallImage {
        let n = self.image_size;
        let mut data = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let inside = |c: usize| c >= self.wall && c < n - self.wall;
                if !(inside(x) && inside(y)) {
                    data[y * n + x] = 1.0;
                }
            }
        }
        WallImage { size: n, data }
    }

    pub fn image(&self) -> &WallImage {
        self.image.as_ref().expect("world image is built on construction")
    }

    /// Gravitational acceleration in world units.
    pub fn gravity(&self) -> f64 {
        self.gravity_px / self.pixels_per_unit
    }

    /// Half-width of the square the billiard centre can reach, in world units:
    /// the free space inset by half the billiard size.
    pub fn bound(&self) -> f64 {
        let half_free = 0.5 * (self.image_size - 2 * self.wall) as f64;
        (half_free - 0.5 * self.ball as f64) / self.pixels_per_unit
    }

    /// World position to continuous pixel coordinates `(x, y)`.
    pub fn to_pixel(&self, q: &[f64]) -> [f64; 2] {
        let c = 0.5 * self.image_size as f64;
        [c + self.pixels_per_unit * q[0], c + self.pixels_per_unit * q[1]]
    }

    pub fn energy(&self, p: &[f64], q: &[f64]) -> f64 {
        0.5 * (p[0] * p[0] + p[1] * p[1]) + self.gravity() * q[1]
    }

    pub fn billiard(&self) -> Billiard {
        Billiard {
            bound: self.bound(),
            gravity: self.gravity(),
        }
    }

    /// Uniform position in the reachable square, uniform direction and speed.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> PhaseState {
        let b = self.bound();
        let q = vec![rng.random_range(-b..b), rng.random_range(-b..b)];
        let speed = rng.random_range(self.speed_px.0..self.speed_px.1) / self.pixels_per_unit;
        let th: f64 = rng.random_range(0.0..TAU);
        PhaseState {
            p: vec![speed * th.cos(), speed * th.sin()],
            q,
        }
    }

    pub fn generate(&self, n_traj: usize, traj_len: usize, dt: f64, seed: u64) -> crate::Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::empty(SystemKind::Billiard, 2, traj_len, dt, seed);
        ds.extra = serde_json::to_value(self)?;
        let b = self.billiard();
        for _ in 0..n_traj {
            let mut s = self.sample_initial(&mut rng);
            let mut traj = Vec::with_capacity(traj_len);
            traj.push(s.clone());
            for _ in 1..traj_len {
                s = b.step(&s, dt);
                traj.push(s.clone());
            }
            ds.push_trajectory(&traj)?;
        }
        Ok(ds)
    }
}

/// `size × size` values of `image` around `center` (pixel coordinates
/// `(x, y)`), row-major over `y`. The centre is rounded to the nearest pixel
/// `c`; the patch covers `c − size/2 ..= c + size/2 − 1` on each axis, and
/// indices outside the image are clamped to its edge.
pub fn extract_patch(image: &WallImage, center: [f64; 2], size: usize) -> Vec<f64> {
    let n = image.size as i64;
    let half = (size / 2) as i64;
    let cx = center[0].round() as i64;
    let cy = center[1].round() as i64;
    let mut out = Vec::with_capacity(size * size);
    for dy in 0..size as i64 {
        let y = (cy - half + dy).clamp(0, n - 1) as usize;
        for dx in 0..size as i64 {
            let x = (cx - half + dx).clamp(0, n - 1) as usize;
            out.push(image.get(x, y));
        }
    }
    out
}

/// Exact point-mass dynamics in the box `[−bound, bound]²` with gravity
/// `(0, −gravity)`, unit mass and perfectly elastic walls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Billiard {
    pub bound: f64,
    pub gravity: f64,
}

const MAX_EVENTS: usize = 64;

impl Billiard {
    /// Earliest time `t ≥ 0` at which `x + v t` reaches a wall while moving
    /// into it.
    fn linear_hit(&self, x: f64, v: f64) -> Option<f64> {
        if v > 0.0 {
            Some(((self.bound - x) / v).max(0.0))
        } else if v < 0.0 {
            Some(((-self.bound - x) / v).max(0.0))
        } else {
            None
        }
    }

    /// Same for `y + v t − ½ g t²`.
    fn vertical_hit(&self, y: f64, v: f64) -> Option<f64> {
        let g = self.gravity;
        if g == 0.0 {
            return self.linear_hit(y, v);
        }
        let b = self.bound;
        let mut best: Option<f64> = None;
        // top wall, reached only while rising
        if v > 0.0 {
            let disc = v * v - 2.0 * g * (b - y);
            if disc >= 0.0 {
                let t = (2.0 * (b - y) / (v + disc.sqrt())).max(0.0);
                best = Some(t);
            }
        }
        // bottom wall, always reached eventually
        let disc = (v * v + 2.0 * g * (y + b)).max(0.0);
        let s = disc.sqrt();
        let t = if v < 0.0 {
            2.0 * (y + b) / (s - v)
        } else {
            (v + s) / g
        };
        let t = t.max(0.0);
        Some(best.map_or(t, |bt| bt.min(t)))
    }

    /// Advances by `dt`, reflecting the normal momentum at every wall contact.
    pub fn step(&self, state: &PhaseState, dt: f64) -> PhaseState {
        let (mut x, mut y) = (state.q[0], state.q[1]);
        let (mut vx, mut vy) = (state.p[0], state.p[1]);
        let g = self.gravity;
        let dir = dt.signum();
        let mut left = dt.abs();
        // Time reversal of the dynamics is handled by flipping velocities.
        if dir < 0.0 {
            vx = -vx;
            vy = -vy;
        }
        for _ in 0..MAX_EVENTS {
            let tx = self.linear_hit(x, vx).unwrap_or(f64::INFINITY);
            let ty = self.vertical_hit(y, vy).unwrap_or(f64::INFINITY);
            let t = tx.min(ty);
            if t >= left {
                break;
            }
            x += vx * t;
            y += vy * t - 0.5 * g * t * t;
            vy -= g * t;
            left -= t;
            if tx <= t {
                x = self.bound.copysign(vx);
                vx = -vx;
            }
            if ty <= t {
                y = self.bound.copysign(vy);
                vy = -vy;
            }
        }
        x += vx * left;
        y += vy * left - 0.5 * g * left * left;
        vy -= g * left;
        if dir < 0.0 {
            vx = -vx;
            vy = -vy;
        }
        PhaseState {
            p: vec![vx, vy],
            q: vec![x, y],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_geometry() {
        let w = BilliardWorld::default();
        let img = w.image();
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(64, 64), 0.0);
        let walls = img.data().iter().filter(|v| **v == 1.0).count();
        assert_eq!(walls, 128 * 128 - 104 * 104);
        assert_eq!(walls, 5568);
        assert_eq!(w.bound(), (64.0 - 13.5) / 32.0);
        assert_eq!(w.to_pixel(&[0.0, 0.0]), [64.0, 64.0]);
    }

    #[test]
    fn patches() {
        let w = BilliardWorld::default();
        let img = w.image();
        assert!(extract_patch(img, [64.0, 64.0], 10).iter().all(|v| *v == 0.0));
        assert!(extract_patch(img, [0.0, 0.0], 10).iter().all(|v| *v == 1.0));
        assert!(extract_patch(img, [127.6, 127.6], 2).iter().all(|v| *v == 1.0));
        // centre rounds to x = 5: columns 0..=9, all inside the 12-px wall
        let p = extract_patch(img, [5.4, 64.0], 10);
        let oracle: Vec<f64> = (59..=68)
            .flat_map(|y| (0..=9).map(move |x| if x < 12 || y < 12 { 1.0 } else { 0.0 }))
            .collect();
        assert_eq!(p, oracle);
        // centre rounds to x = 10: columns 5..=14, the first seven are wall
        let p = extract_patch(img, [10.4, 64.0], 10);
        for row in p.chunks(10) {
            assert_eq!(row, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        }
        let p = extract_patch(img, [12.0, 12.0], 2);
        assert_eq!(p, vec![1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn free_flight_is_a_parabola() {
        let b = BilliardWorld::default().billiard();
        let s = PhaseState::new(vec![0.3, 0.2], vec![0.1, -0.2]).unwrap();
        let out = b.step(&s, 0.1);
        let g = b.gravity;
        assert!((out.q[0] - (0.1 + 0.03)).abs() < 1e-15);
        assert!((out.q[1] - (-0.2 + 0.02 - 0.5 * g * 0.01)).abs() < 1e-15);
        assert!((out.p[1] - (0.2 - g * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn vertical_wall_reverses_x_momentum() {
        let b = Billiard {
            bound: 1.0,
            gravity: 0.0,
        };
        let s = PhaseState::new(vec![2.0, 0.0], vec![0.9, 0.0]).unwrap();
        let out = b.step(&s, 0.1);
        assert_eq!(out.p, vec![-2.0, 0.0]);
        assert!((out.q[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn corner_double_bounce() {
        let b = Billiard {
            bound: 1.0,
            gravity: 0.0,
        };
        let s = PhaseState::new(vec![1.0, 2.0], vec![0.95, 0.9]).unwrap();
        let out = b.step(&s, 0.1);
        assert_eq!(out.p, vec![-1.0, -2.0]);
        assert!((out.q[0] - 0.95).abs() < 1e-12);
        assert!((out.q[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn energy_and_reversibility_over_random_steps() {
        let w = BilliardWorld::default();
        let b = w.billiard();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = w.sample_initial(&mut rng);
        let e0 = w.energy(&s.p, &s.q);
        for _ in 0..10_000 {
            let next = b.step(&s, 0.1);
            assert!((w.energy(&next.p, &next.q) - e0).abs() < 1e-9);
            assert!(next.q.iter().all(|v| v.abs() <= w.bound() + 1e-12));
            let back = b.step(&PhaseState::new(next.p.iter().map(|v| -v).collect(), next.q.clone()).unwrap(), 0.1);
            for (a, c) in back.q.iter().zip(&s.q) {
                assert!((a - c).abs() < 1e-9);
            }
            s = next;
        }
    }
}
