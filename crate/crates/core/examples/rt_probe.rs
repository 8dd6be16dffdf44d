use pipe_core::dynamics::Mode;
use pipe_core::montecarlo::dataset::{parse_dataset, render_dataset};
use pipe_core::montecarlo::{GridSource, GridSpec, ProbabilityGrid};

fn main() {
    let spec = GridSpec::planar(3.9000000000000004, 7.6000000000000005, 4, 0.0, 8.25, 2, 0.25).unwrap();
    let values = vec![0.5; spec.cell_count()];
    let grid = ProbabilityGrid::new(spec, values, 10, Mode::Recovery, GridSource::MonteCarlo).unwrap();
    let text = render_dataset(&grid);
    match parse_dataset(&text) {
        Ok(back) => {
            println!("spec equal: {}", back.spec == grid.spec);
            if back.spec != grid.spec {
                println!("orig: {:?}", grid.spec);
                println!("back: {:?}", back.spec);
            }
        }
        Err(e) => println!("parse error: {e}"),
    }
    println!("{}", text.lines().take(5).collect::<Vec<_>>().join("\n"));
}
