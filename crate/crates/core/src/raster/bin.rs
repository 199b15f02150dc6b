use crate::model::Projected2DGaussian;

/// Per-tile lists of Gaussian indices, each ordered front to back by
/// `(depth, index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBins {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn list(&self, tx: usize, ty: usize) -> &[u32] {
        &self.lists[ty * self.tiles_x + tx]
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive end) of tile `t`.
    pub fn tile_rect(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(self.width),
            (y0 + self.tile_size).min(self.height),
        )
    }
}

/// Inclusive pixel range whose centers fall inside the support box, or
/// `None` if no pixel center of the image does.
pub fn pixel_footprint(
    p: &Projected2DGaussian,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let [rx, ry] = p.extent();
    let lo = |c: f64, r: f64| (c - r - 0.5).ceil();
    let hi = |c: f64, r: f64| (c + r - 0.5).floor();
    let x0 = lo(p.mean2d[0], rx).max(0.0);
    let y0 = lo(p.mean2d[1], ry).max(0.0);
    let x1 = hi(p.mean2d[0], rx).min(width as f64 - 1.0);
    let y1 = hi(p.mean2d[1], ry).min(height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Assigns every projected Gaussian to each tile containing a pixel center
/// of its support box.
pub fn tile_bin(
    projected: &[Option<Projected2DGaussian>],
    width: usize,
    height: usize,
    tile_size: usize,
) -> TileBins {
    assert!(tile_size >= 1, "tile_size must be at least 1");
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut order: Vec<(f64, u32)> = projected
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (p.depth, i as u32)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &(_, i) in &order {
        let p = projected[i as usize].as_ref().unwrap();
        if let Some((x0, y0, x1, y1)) = pixel_footprint(p, width, height) {
            for ty in y0 / tile_size..=y1 / tile_size {
                for tx in x0 / tile_size..=x1 / tile_size {
                    lists[ty * tiles_x + tx].push(i);
                }
            }
        }
    }
    TileBins {
        width,
        height,
        tile_size,
        tiles_x,
        tiles_y,
        lists,
    }
}
