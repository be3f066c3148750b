//! Oriented boxes: IoU, canonical frames and region cropping.
//!
//! Usage: `cargo run --example box_geometry`

use std::f64::consts::FRAC_PI_4;

use pctrack::geometry::{apply_box_offset, crop_region, iou3d, Box3D, CropParams, PointCloud, RegionKind};

fn main() -> pctrack::Result<()> {
    let unit = Box3D::canonical([1.0; 3]);
    let shifted = Box3D::new([0.5, 0.0, 0.0], 0.0, [1.0; 3])?;
    let turned = Box3D::new([0.0; 3], FRAC_PI_4, [1.0; 3])?;
    println!("IoU, half-overlapping cubes: {:.4}", iou3d(&unit, &shifted));
    println!("IoU, cube vs 45° turned:     {:.4}", iou3d(&unit, &turned));

    // A car-sized box, and where it ends up after a step in its own frame.
    let car = Box3D::new([10.0, 5.0, 0.8], 0.3, [4.2, 1.8, 1.6])?;
    let next = apply_box_offset(&car, [0.7, 0.05, 0.0, 0.02]);
    let rel = car.relative(&next);
    println!(
        "moved box seen from the old one: center ({:.3}, {:.3}, {:.3}), yaw {:+.3}",
        rel.center[0], rel.center[1], rel.center[2], rel.yaw
    );

    // Points on a line through the car; the crop keeps those near it and
    // expresses them in the box frame.
    let cloud = PointCloud::new((0..40).map(|i| car.to_world([-6.0 + 0.3 * i as f64, 0.0, 0.0])).collect());
    let region = crop_region(
        &cloud,
        &car,
        CropParams {
            enlarge: 1.0,
            n_out: 8,
            kind: RegionKind::Template,
        },
        0,
    );
    println!("template crop (x in box frame, mask):");
    for (p, m) in region.points.points.iter().zip(&region.mask) {
        println!("  {:+.2}  {m}", p[0]);
    }
    Ok(())
}
