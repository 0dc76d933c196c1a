//! Discrete Fréchet distance between a sketch and a resampled demo.

use canvas_nav::geometry::{resample_by_arclength, Point2, Polyline};
use canvas_nav::metrics::discrete_frechet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sketch = Polyline::new(vec![Point2::new(0.0, 0.0), Point2::new(4.0, 0.0), Point2::new(4.0, 3.0)])?;
    let demo = Polyline::new(vec![
        Point2::new(0.0, 0.2),
        Point2::new(2.0, -0.3),
        Point2::new(3.6, 0.4),
        Point2::new(4.2, 3.1),
    ])?;
    for spacing in [1.0, 0.5, 0.1] {
        let a = resample_by_arclength(&sketch, spacing)?;
        let b = resample_by_arclength(&demo, spacing)?;
        let fd = discrete_frechet(a.points(), b.points())?;
        println!("spacing {spacing:>4} m: {:>3} x {:>3} samples, FD {fd:.3} m", a.len(), b.len());
    }
    Ok(())
}
