//! Rasterization of the two policy inputs: the top-down canvas map and a
//! raycast front view.
//!
//! The canvas letterboxes the whole grid into 512×512 pixels with north up.
//! Layers are painted in a fixed order: cell palette, sketch (red), hindsight
//! (blue), robot marker (green). The front view is a column raycaster with a
//! 90° field of view and perpendicular-distance wall heights.

use std::io::Cursor;

use crate::error::{RenderError, WorldError};
use crate::geometry::{Point2, Pose2};
use crate::world::{CellClass, OccupancyGrid};

pub const CANVAS_SIZE: usize = 512;
pub const FRONT_WIDTH: usize = 256;
pub const FRONT_HEIGHT: usize = 144;
pub const FRONT_FOV: f64 = std::f64::consts::FRAC_PI_2;
/// Camera height above the floor, meters.
pub const CAMERA_HEIGHT: f64 = 0.5;
/// Height of blocking cells, meters.
pub const WALL_HEIGHT: f64 = 1.0;
pub const FRONT_MAX_RANGE: f64 = 30.0;
pub const STROKE_WIDTH: f64 = 3.0;
pub const MARKER_SIZE: f64 = 9.0;

pub const SKETCH_COLOR: [u8; 4] = [255, 0, 0, 255];
pub const HINDSIGHT_COLOR: [u8; 4] = [0, 0, 255, 255];
pub const ROBOT_COLOR: [u8; 4] = [0, 255, 0, 255];
pub const LETTERBOX_COLOR: [u8; 4] = [24, 24, 32, 255];
pub const SKY_COLOR: [u8; 3] = [156, 196, 232];
pub const FLOOR_COLOR: [u8; 3] = [176, 172, 166];

/// Canvas palette, one entry per cell class.
pub fn canvas_color(class: CellClass) -> [u8; 4] {
    let [r, g, b] = match class {
        CellClass::Free => [236, 236, 236],
        CellClass::Wall => [48, 48, 48],
        CellClass::Obstacle => [104, 80, 56],
        CellClass::Rock => [128, 118, 108],
        CellClass::Grass => [120, 176, 96],
        CellClass::Road => [88, 88, 100],
        CellClass::Sidewalk => [200, 192, 176],
        CellClass::Crosswalk => [248, 244, 200],
    };
    [r, g, b, 255]
}

/// Front-view palette: wall faces for blocking classes, floor bands for the
/// rest. Free floor uses [`FLOOR_COLOR`].
pub fn front_color(class: CellClass) -> [u8; 3] {
    match class {
        CellClass::Free => FLOOR_COLOR,
        CellClass::Wall => [92, 92, 110],
        CellClass::Obstacle => [140, 100, 60],
        CellClass::Rock => [110, 104, 98],
        CellClass::Grass => [96, 160, 72],
        CellClass::Road => [72, 72, 80],
        CellClass::Sidewalk => [196, 184, 160],
        CellClass::Crosswalk => [240, 240, 220],
    }
}

/// Affine world-to-pixel mapping of the letterboxed canvas. Pixel `(i, j)`
/// covers `[i, i+1) × [j, j+1)` with `j` growing southward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanvasTransform {
    pub pixels_per_meter: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub world_min: Point2,
    pub world_max_y: f64,
}

impl CanvasTransform {
    pub fn fit(grid: &OccupancyGrid, size: usize) -> Self {
        let (w, h) = grid.extent();
        let s = size as f64 / w.max(h);
        Self {
            pixels_per_meter: s,
            offset_x: (size as f64 - w * s) / 2.0,
            offset_y: (size as f64 - h * s) / 2.0,
            world_min: grid.origin(),
            world_max_y: grid.origin().y + h,
        }
    }

    pub fn meters_per_pixel(&self) -> f64 {
        1.0 / self.pixels_per_meter
    }

    pub fn world_to_pixel(&self, p: Point2) -> Point2 {
        Point2::new(
            self.offset_x + (p.x - self.world_min.x) * self.pixels_per_meter,
            self.offset_y + (self.world_max_y - p.y) * self.pixels_per_meter,
        )
    }

    pub fn pixel_to_world(&self, q: Point2) -> Point2 {
        Point2::new(
            self.world_min.x + (q.x - self.offset_x) / self.pixels_per_meter,
            self.world_max_y - (q.y - self.offset_y) / self.pixels_per_meter,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanvasImage {
    pub width: usize,
    pub height: usize,
    /// RGBA rows, top row first.
    pub pixels: Vec<u8>,
    pub transform: CanvasTransform,
}

impl CanvasImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.transform.meters_per_pixel()
    }

    pub fn count_color(&self, color: [u8; 4]) -> usize {
        self.pixels.chunks_exact(4).filter(|c| *c == color).count()
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 4]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 4;
        self.pixels[i..i + 4].copy_from_slice(&color);
    }

    /// Paints every pixel whose center lies within half the stroke width of
    /// the polyline (in pixel space).
    fn stroke(&mut self, points: &[Point2], color: [u8; 4]) {
        let half = STROKE_WIDTH / 2.0;
        let px: Vec<Point2> = points.iter().map(|&p| self.transform.world_to_pixel(p)).collect();
        let segs: Vec<(Point2, Point2)> = match px.len() {
            0 => return,
            1 => vec![(px[0], px[0])],
            _ => px.windows(2).map(|w| (w[0], w[1])).collect(),
        };
        for (a, b) in segs {
            let x0 = (a.x.min(b.x) - half).floor() as i64;
            let x1 = (a.x.max(b.x) + half).ceil() as i64;
            let y0 = (a.y.min(b.y) - half).floor() as i64;
            let y1 = (a.y.max(b.y) + half).ceil() as i64;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if stroke_covers(x, y, a, b, half) {
                        self.put(x, y, color);
                    }
                }
            }
        }
    }

    fn marker(&mut self, pose: Pose2) {
        let c = self.transform.world_to_pixel(pose.position);
        // Pixel rows grow southward, so the heading flips sign.
        let fwd = Point2::new(libm::cos(pose.heading), -libm::sin(pose.heading));
        let side = Point2::new(-fwd.y, fwd.x);
        let r = MARKER_SIZE / 2.0;
        let tip = c + fwd * r;
        let left = c - fwd * r + side * r;
        let right = c - fwd * r - side * r;
        let x0 = (c.x - r * 1.5).floor() as i64;
        let y0 = (c.y - r * 1.5).floor() as i64;
        let span = (r * 3.0).ceil() as i64 + 1;
        for y in y0..=y0 + span {
            for x in x0..=x0 + span {
                let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
                if in_triangle(p, tip, left, right) {
                    self.put(x, y, ROBOT_COLOR);
                }
            }
        }
    }
}

/// Pixel `(x, y)` belongs to the stroke when at least half of it lies
/// within `half` of segment `ab`, judged on a 4×4 subsample grid.
fn stroke_covers(x: i64, y: i64, a: Point2, b: Point2, half: f64) -> bool {
    let center = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
    let d = point_segment_distance(center, a, b);
    if d <= half - std::f64::consts::FRAC_1_SQRT_2 {
        return true;
    }
    if d > half + std::f64::consts::FRAC_1_SQRT_2 {
        return false;
    }
    let mut inside = 0;
    for i in 0..4 {
        for j in 0..4 {
            let p = Point2::new(x as f64 + (i as f64 + 0.5) / 4.0, y as f64 + (j as f64 + 0.5) / 4.0);
            inside += usize::from(point_segment_distance(p, a, b) <= half);
        }
    }
    inside >= 8
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

fn in_triangle(p: Point2, a: Point2, b: Point2, c: Point2) -> bool {
    let d1 = (b - a).cross(p - a);
    let d2 = (c - b).cross(p - b);
    let d3 = (a - c).cross(p - c);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Palette-only canvas layer.
pub fn render_base(grid: &OccupancyGrid) -> CanvasImage {
    let transform = CanvasTransform::fit(grid, CANVAS_SIZE);
    let mut pixels = Vec::with_capacity(CANVAS_SIZE * CANVAS_SIZE * 4);
    for y in 0..CANVAS_SIZE {
        for x in 0..CANVAS_SIZE {
            let w = transform.pixel_to_world(Point2::new(x as f64 + 0.5, y as f64 + 0.5));
            let color = grid.class_at(w).map_or(LETTERBOX_COLOR, canvas_color);
            pixels.extend_from_slice(&color);
        }
    }
    CanvasImage {
        width: CANVAS_SIZE,
        height: CANVAS_SIZE,
        pixels,
        transform,
    }
}

/// Canvas map: palette, sketch, hindsight and robot marker, in that order.
/// Empty `sketch` or `hindsight` slices draw nothing.
pub fn render_canvas(grid: &OccupancyGrid, sketch: &[Point2], hindsight: &[Point2], robot: Option<Pose2>) -> CanvasImage {
    let mut img = render_base(grid);
    img.stroke(sketch, SKETCH_COLOR);
    img.stroke(hindsight, HINDSIGHT_COLOR);
    if let Some(pose) = robot {
        img.marker(pose);
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontViewImage {
    pub width: usize,
    pub height: usize,
    /// RGB rows, top row first.
    pub pixels: Vec<u8>,
}

impl FrontViewImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Number of rows in column `x` painted with `color`.
    pub fn column_count(&self, x: usize, color: [u8; 3]) -> usize {
        (0..self.height).filter(|&y| self.pixel(x, y) == color).count()
    }
}

/// Focal length in pixels for the configured field of view.
pub fn front_focal_length() -> f64 {
    FRONT_WIDTH as f64 / 2.0 / libm::tan(FRONT_FOV / 2.0)
}

pub fn render_front_view(grid: &OccupancyGrid, pose: Pose2) -> Result<FrontViewImage, WorldError> {
    if !grid.contains(pose.position) {
        return Err(WorldError::OutOfBounds {
            x: pose.position.x,
            y: pose.position.y,
        });
    }
    let f = front_focal_length();
    let horizon = FRONT_HEIGHT as f64 / 2.0;
    let mut pixels = vec![0u8; FRONT_WIDTH * FRONT_HEIGHT * 3];
    for col in 0..FRONT_WIDTH {
        // Column 0 looks left, i.e. toward +y in the ego frame.
        let offset = libm::atan((FRONT_WIDTH as f64 / 2.0 - (col as f64 + 0.5)) / f);
        let dir = pose.heading + offset;
        let (dist, hit) = grid.raycast(pose.position, dir, FRONT_MAX_RANGE)?;
        let wall = hit.map(|class| {
            let perp = (dist * libm::cos(offset)).max(1e-6);
            (f * (WALL_HEIGHT - CAMERA_HEIGHT) / perp, f * CAMERA_HEIGHT / perp, front_color(class))
        });
        let (sin_d, cos_d) = libm::sincos(dir);
        for row in 0..FRONT_HEIGHT {
            let dy = row as f64 + 0.5 - horizon;
            let color = match wall {
                Some((above, below, c)) if -dy <= above && dy <= below => c,
                _ if dy <= 0.0 => SKY_COLOR,
                _ => {
                    let along = f * CAMERA_HEIGHT / dy / libm::cos(offset);
                    let p = pose.position + Point2::new(cos_d, sin_d) * along;
                    match grid.class_at(p) {
                        Some(c) if !c.is_blocking() => front_color(c),
                        _ => FLOOR_COLOR,
                    }
                }
            };
            let i = (row * FRONT_WIDTH + col) * 3;
            pixels[i..i + 3].copy_from_slice(&color);
        }
    }
    Ok(FrontViewImage {
        width: FRONT_WIDTH,
        height: FRONT_HEIGHT,
        pixels,
    })
}

/// Raw raster with 3 (RGB) or 4 (RGBA) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl From<&CanvasImage> for Raster {
    fn from(img: &CanvasImage) -> Self {
        Raster {
            width: img.width,
            height: img.height,
            channels: 4,
            data: img.pixels.clone(),
        }
    }
}

impl From<&FrontViewImage> for Raster {
    fn from(img: &FrontViewImage) -> Self {
        Raster {
            width: img.width,
            height: img.height,
            channels: 3,
            data: img.pixels.clone(),
        }
    }
}

/// Encodes with fixed filter and compression settings so identical images
/// give identical bytes.
pub fn encode_png(img: &Raster) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 4 {
            png::ColorType::Rgba
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::Sub);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&img.data).expect("in-memory png data");
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<Raster, RenderError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| RenderError::Decode(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RenderError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| RenderError::Decode(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(RenderError::Unsupported(format!("color type {other:?}"))),
    };
    buf.truncate(info.buffer_size());
    Ok(Raster {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(200, 100, 0.1, Point2::new(0.0, 0.0), CellClass::Free);
        g.fill_rect(Point2::new(0.0, 0.0), Point2::new(20.0, 0.3), CellClass::Wall);
        g.fill_rect(Point2::new(5.0, 5.0), Point2::new(6.0, 6.0), CellClass::Grass);
        g
    }

    #[test]
    fn palette_only_canvas() {
        let g = room();
        let img = render_canvas(&g, &[], &[], None);
        let allowed: Vec<[u8; 4]> = CellClass::ALL
            .iter()
            .map(|&c| canvas_color(c))
            .chain([LETTERBOX_COLOR])
            .collect();
        assert!(img.pixels.chunks_exact(4).all(|c| allowed.iter().any(|a| a == c)));
        assert_eq!(img.count_color(SKETCH_COLOR), 0);
        // 20 m × 10 m map: 256 rows letterboxed above and below.
        assert_eq!(img.transform.pixels_per_meter, 25.6);
        assert_eq!(img.pixel(10, 10), LETTERBOX_COLOR);
        assert_eq!(img.pixel(256, 256), canvas_color(CellClass::Free));
        assert_eq!(img, render_canvas(&g, &[], &[], None));
    }

    #[test]
    fn layer_colors_distinct_from_palette() {
        for c in CellClass::ALL {
            let p = canvas_color(c);
            assert_ne!(p, SKETCH_COLOR);
            assert_ne!(p, HINDSIGHT_COLOR);
            assert_ne!(p, ROBOT_COLOR);
        }
    }

    #[test]
    fn diagonal_stroke_area() {
        let g = OccupancyGrid::new(100, 100, 0.1, Point2::ORIGIN, CellClass::Free);
        let sketch = [Point2::new(1.0, 1.0), Point2::new(9.0, 6.3)];
        let img = render_canvas(&g, &sketch, &[], None);
        let t = img.transform;
        let len = t.world_to_pixel(sketch[0]).distance(t.world_to_pixel(sketch[1]));
        let expect = STROKE_WIDTH * len;
        let got = img.count_color(SKETCH_COLOR) as f64;
        assert!((got - expect).abs() <= 0.1 * expect, "{got} vs {expect}");
    }

    #[test]
    fn hindsight_over_sketch_marker_on_top() {
        let g = OccupancyGrid::new(100, 100, 0.1, Point2::ORIGIN, CellClass::Free);
        let line = [Point2::new(1.0, 5.0), Point2::new(9.0, 5.0)];
        let img = render_canvas(&g, &line, &line, Some(Pose2::new(5.0, 5.0, 0.0)));
        assert_eq!(img.count_color(SKETCH_COLOR), 0);
        assert!(img.count_color(HINDSIGHT_COLOR) > 0);
        let c = img.transform.world_to_pixel(Point2::new(5.0, 5.0));
        assert_eq!(img.pixel(c.x as usize, c.y as usize), ROBOT_COLOR);
        let markers = img.count_color(ROBOT_COLOR);
        assert!((20..=60).contains(&markers), "{markers}");
    }

    #[test]
    fn transform_round_trip() {
        let g = room();
        let t = CanvasTransform::fit(&g, CANVAS_SIZE);
        for &(x, y) in &[(0.0, 0.0), (20.0, 10.0), (3.3, 7.1)] {
            let p = Point2::new(x, y);
            let back = t.pixel_to_world(t.world_to_pixel(p));
            assert!(back.distance(p) * t.pixels_per_meter < 1e-9);
        }
        let corner = t.world_to_pixel(Point2::new(0.0, 10.0));
        assert!((corner.x - 0.0).abs() < 1e-9 && (corner.y - 128.0).abs() < 1e-9);
    }

    #[test]
    fn free_front_view_is_floor_and_sky() {
        let g = OccupancyGrid::new(100, 100, 0.1, Point2::ORIGIN, CellClass::Free);
        let img = render_front_view(&g, Pose2::new(5.0, 5.0, 0.3)).unwrap();
        for y in 0..FRONT_HEIGHT {
            for x in 0..FRONT_WIDTH {
                let want = if y < FRONT_HEIGHT / 2 { SKY_COLOR } else { FLOOR_COLOR };
                assert_eq!(img.pixel(x, y), want);
            }
        }
    }

    #[test]
    fn wall_height_inverse_to_distance() {
        let mut g = OccupancyGrid::new(100, 100, 0.1, Point2::ORIGIN, CellClass::Free);
        g.fill_rect(Point2::new(6.0, 0.0), Point2::new(7.0, 10.0), CellClass::Wall);
        let wall = front_color(CellClass::Wall);
        let near = render_front_view(&g, Pose2::new(5.0, 5.0, 0.0)).unwrap();
        let far = render_front_view(&g, Pose2::new(4.0, 5.0, 0.0)).unwrap();
        let mid = FRONT_WIDTH / 2;
        let (hn, hf) = (near.column_count(mid, wall), far.column_count(mid, wall));
        assert!((hn as i64 - 128).abs() <= 1, "{hn}");
        assert!((hn as i64 - 2 * hf as i64).abs() <= 1, "{hn} vs {hf}");
    }

    #[test]
    fn rock_ahead_uses_rock_color() {
        let mut g = OccupancyGrid::new(100, 100, 0.1, Point2::ORIGIN, CellClass::Grass);
        g.fill_disc(Point2::new(7.0, 5.0), 0.5, CellClass::Rock);
        let img = render_front_view(&g, Pose2::new(5.0, 5.0, 0.0)).unwrap();
        let rock = front_color(CellClass::Rock);
        assert!(img.column_count(FRONT_WIDTH / 2, rock) > 30);
        assert_eq!(img.pixel(FRONT_WIDTH / 2, FRONT_HEIGHT - 1), front_color(CellClass::Grass));
    }

    #[test]
    fn front_view_outside_grid() {
        let g = room();
        assert!(matches!(
            render_front_view(&g, Pose2::new(-1.0, 5.0, 0.0)),
            Err(WorldError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn png_round_trip() {
        let one = Raster {
            width: 1,
            height: 1,
            channels: 4,
            data: vec![255, 0, 0, 255],
        };
        let bytes = encode_png(&one);
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(decode_png(&bytes).unwrap(), one);

        let g = room();
        let canvas = render_canvas(&g, &[Point2::new(1.0, 1.0), Point2::new(15.0, 8.0)], &[], Some(Pose2::new(2.0, 2.0, 1.0)));
        let raster = Raster::from(&canvas);
        let a = encode_png(&raster);
        assert_eq!(a, encode_png(&raster));
        assert_eq!(decode_png(&a).unwrap(), raster);

        let fv = Raster::from(&render_front_view(&g, Pose2::new(5.0, 5.0, -1.2)).unwrap());
        assert_eq!(decode_png(&encode_png(&fv)).unwrap(), fv);
        assert!(decode_png(b"not a png").is_err());
    }
}
