macro_rules! example {
    ($module:ident, $file:literal) => {
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $module() {
            $module::run().expect(concat!($file, " runs"));
        }
    };
}

example!(solve_quadratic, "solve_quadratic.rs");
example!(linear_representation, "linear_representation.rs");
example!(bmo_toolkit, "bmo_toolkit.rs");
example!(truncation_sweep, "truncation_sweep.rs");
example!(monotone_check, "monotone_check.rs");
example!(diagonal_scheme, "diagonal_scheme.rs");
example!(stability_lab, "stability_lab.rs");
example!(malliavin_diagnostics, "malliavin_diagnostics.rs");
example!(sphere_martingale, "sphere_martingale.rs");
example!(markovian_regularity, "markovian_regularity.rs");
example!(json_config, "json_config.rs");
