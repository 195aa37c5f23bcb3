use hdm_bench::{desk_model, small_desk_dataset, uniform};

#[test]
fn fixtures_fit_the_desk_model() {
    let ds = small_desk_dataset();
    let model = desk_model(&ds.scene);
    let out = model.predict(&ds.image_tensor(&[0]).unwrap()).unwrap();
    assert_eq!(out.shape(), &[1, 17, 17, 3]);
    assert_eq!(uniform(4, &[2, 3]), uniform(4, &[2, 3]));
}
