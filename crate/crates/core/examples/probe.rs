use papertrust_core::features::*;
use papertrust_core::optics::*;
use papertrust_core::surface::*;

fn angular(a: &NormMap, b: &NormMap) -> f64 {
    let mut t = 0.0;
    for (x, y) in a.normals().iter().zip(b.normals()) {
        let dot = (x[0]*y[0]+x[1]*y[1]+x[2]*y[2]).clamp(-1.0,1.0);
        t += dot.acos().to_degrees();
    }
    t / a.normals().len() as f64
}

fn main() {
    let nm = generate_surface(&SurfaceParams::new(32, 32, 3.0, 0.2, 100)).unwrap();
    let mut envs6 = EnvironmentModel::corner_lights(32, 32, 32.0);
    envs6.push(EnvironmentModel::camera_at([15.0, 3.0, 48.0]));
    envs6.push(EnvironmentModel::camera_at([5.0, 27.0, 24.0]));

    // noiseless 6-light
    let set0 = acquire(&nm, &AcquisitionPlan::camera(envs6.clone(), 300)).unwrap();
    let est0 = estimate_norm_map_camera(&set0).unwrap();
    println!("6-light noiseless angerr={:.4}", angular(&est0.norm_map, &nm));

    // noisy 6-light
    let set = acquire(&nm, &AcquisitionPlan::camera(envs6.clone(), 300).with_noise(0.01)).unwrap();
    for (i, img) in set.images.iter().enumerate() {
        let (lo, hi) = img.min_max();
        println!("img{i}: range=({lo:.4},{hi:.4}) sigma={:.5}", img.meta.noise_sigma);
    }
    let est = estimate_norm_map_camera(&set).unwrap();
    println!("6-light noisy angerr={:.3}", angular(&est.norm_map, &nm));

    // 5-light variants to isolate the culprit
    for drop in 4..6 {
        let mut envs5 = envs6.clone();
        envs5.remove(drop);
        let set = acquire(&nm, &AcquisitionPlan::camera(envs5, 300).with_noise(0.01)).unwrap();
        let est = estimate_norm_map_camera(&set).unwrap();
        println!("without light {drop}: angerr={:.3}", angular(&est.norm_map, &nm));
    }
}
