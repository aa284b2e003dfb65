/// Direction bins around a center: 8 azimuth sectors in each z hemisphere.
pub const NUM_BINS: usize = 16;
pub const AZIMUTH_SECTORS: usize = 8;

/// Direction bin of `offset`: `8 · hemisphere + sector`.
///
/// The hemisphere is 0 for `z ≥ 0` and 1 otherwise. The sector is the 45°
/// azimuth slice `[k·45°, (k+1)·45°)` measured counter-clockwise from +x.
/// Sector boundaries are decided by exact comparisons of `x` and `y`, so
/// offsets lying on a boundary always land in the higher sector. A zero
/// offset (or one along the z axis) has azimuth 0.
pub fn bin_of(offset: [f64; 3]) -> usize {
    let [x, y, z] = offset;
    let hemisphere = if z >= 0.0 { 0 } else { AZIMUTH_SECTORS };
    hemisphere + azimuth_sector(x, y)
}

fn azimuth_sector(x: f64, y: f64) -> usize {
    if x == 0.0 && y == 0.0 {
        0
    } else if x > 0.0 && y >= 0.0 {
        if y < x {
            0
        } else {
            1
        }
    } else if x <= 0.0 && y > 0.0 {
        if -x < y {
            2
        } else {
            3
        }
    } else if x < 0.0 && y <= 0.0 {
        if -y < -x {
            4
        } else {
            5
        }
    } else if x < -y {
        6
    } else {
        7
    }
}
