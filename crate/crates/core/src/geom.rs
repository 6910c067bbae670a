//! Small fixed-size 3-vector and 3×3 helpers.

pub type Vec3 = [f64; 3];
/// Rows are lattice vectors.
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, c: f64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Inverse of `m`, or `None` when |det| is below `1e-12` of the row-norm product.
pub fn inverse(m: &Mat3) -> Option<Mat3> {
    let d = det(m);
    let scale = norm(m[0]) * norm(m[1]) * norm(m[2]);
    if scale == 0.0 || d.abs() <= 1e-12 * scale {
        return None;
    }
    // columns of the inverse are the reciprocal vectors
    let c0 = cross(m[1], m[2]);
    let c1 = cross(m[2], m[0]);
    let c2 = cross(m[0], m[1]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        inv[r] = [c0[r] / d, c1[r] / d, c2[r] / d];
    }
    Some(inv)
}

/// Perpendicular distance between the pair of cell faces spanned by the
/// other two lattice vectors, for each axis.
pub fn cell_heights(m: &Mat3) -> Vec3 {
    let vol = det(m).abs();
    [
        vol / norm(cross(m[1], m[2])),
        vol / norm(cross(m[2], m[0])),
        vol / norm(cross(m[0], m[1])),
    ]
}

/// `o · cell` for an integer offset `o`.
#[inline]
pub fn offset_shift(offset: [i32; 3], cell: &Mat3) -> Vec3 {
    let mut s = [0.0; 3];
    for k in 0..3 {
        if offset[k] != 0 {
            let f = offset[k] as f64;
            s[0] += f * cell[k][0];
            s[1] += f * cell[k][1];
            s[2] += f * cell[k][2];
        }
    }
    s
}

/// Row vector times matrix: `v · m`.
#[inline]
pub fn vec_mat(v: Vec3, m: &Mat3) -> Vec3 {
    [
        v[0] * m[0][0] + v[1] * m[1][0] + v[2] * m[2][0],
        v[0] * m[0][1] + v[1] * m[1][1] + v[2] * m[2][1],
        v[0] * m[0][2] + v[1] * m[1][2] + v[2] * m[2][2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in a.iter().enumerate() {
        out[r] = vec_mat(*row, b);
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (r, row) in t.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[c][r];
        }
    }
    t
}

/// Rotation matrix (acting on row vectors as `v · Rᵀ`) from a unit quaternion
/// built out of four arbitrary reals.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Applies `r` to a row vector: `v · rᵀ`.
#[inline]
pub fn rotate(v: Vec3, r: &Mat3) -> Vec3 {
    [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = [[2.0, 0.1, 0.0], [0.3, 3.0, 0.2], [0.0, 0.5, 4.0]];
        let inv = inverse(&m).unwrap();
        let id = mat_mul(&m, &inv);
        for r in 0..3 {
            for c in 0..3 {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((id[r][c] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_cell_has_no_inverse() {
        let m = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(inverse(&m).is_none());
    }

    #[test]
    fn heights_of_skewed_cell() {
        let m = [[10.0, 0.0, 0.0], [5.0, 8.0, 0.0], [0.0, 0.0, 7.0]];
        let h = cell_heights(&m);
        // |b × c| = sqrt(56² + 35²), volume 560
        assert!((h[0] - 560.0 / 4361f64.sqrt()).abs() < 1e-12);
        assert!((h[1] - 8.0).abs() < 1e-12);
        assert!((h[2] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn quaternion_rotation_is_orthonormal() {
        let r = rotation_from_quaternion([0.3, -1.2, 0.7, 0.1]);
        let rrt = mat_mul(&r, &transpose(&r));
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((rrt[i][j] - e).abs() < 1e-12);
            }
        }
        assert!((det(&r) - 1.0).abs() < 1e-12);
    }
}
