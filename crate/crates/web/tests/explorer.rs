use saliency_web::Explorer;
use saliency_core::Config;

#[test]
fn synthetic_scene_round_trip() {
    let mut ex = Explorer::synthetic(48, 3, 7).unwrap();
    let n = ex.segment(30, 10.0).unwrap();
    assert!(n > 10 && n < 60, "{n}");
    let overlay = ex.overlay_rgba();
    assert_eq!(overlay.len(), 48 * 48 * 4);
    assert_ne!(overlay, ex.image_rgba());

    let stages = ex.refine(&Config { n_superpixels: 40, ..Config::default() }).unwrap();
    for map in [&stages.deep, &stages.coarse, &stages.refined, stages.boundary.as_ref().unwrap()] {
        assert_eq!(map.len(), 48 * 48 * 4);
    }
    let (deep, refined) = stages.max_f.unwrap();
    assert!(refined >= deep, "{refined} < {deep}");

    let no_prior = ex.refine(&Config { n_superpixels: 40, beta: 0.0, ..Config::default() }).unwrap();
    assert!(no_prior.boundary.is_none());
    assert_eq!(no_prior.coarse, no_prior.deep);
}

#[test]
fn uploaded_image_uses_center_prior() {
    let rgba: Vec<u8> = (0..20 * 10).flat_map(|i| [(i % 256) as u8, 40, 200, 255]).collect();
    let ex = Explorer::from_rgba(20, 10, &rgba).unwrap();
    assert_eq!(ex.image_rgba(), rgba);
    assert_eq!(ex.overlay_rgba(), rgba);
    let stages = ex.refine(&Config { n_superpixels: 8, ..Config::default() }).unwrap();
    assert!(stages.max_f.is_none());
    assert!(Explorer::from_rgba(20, 10, &rgba[4..]).is_err());
    assert!(Explorer::synthetic(4, 0, 3).is_err());
}
