use permlab::csv_io::{dataset_from_table, read_table};
use permlab::write_csv;
use permlab_core::{Covariate, Dataset, ModelSpec, Outcome};
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    // 15 significant digits.
    a == b || (a - b).abs() <= 1e-15 * a.abs().max(b.abs()) * 10.0
}

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        (-1e-6f64..1e-6),
        (-300i32..300, -10.0f64..10.0).prop_map(|(e, m)| m * 10f64.powi(e)),
        Just(0.0),
    ]
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..30).prop_flat_map(|n| {
        (
            proptest::collection::vec(proptest::option::weighted(0.8, value()), n),
            proptest::collection::vec(0u8..2, n),
            proptest::collection::vec(value(), n),
        )
            .prop_map(|(y, d, x)| {
                Dataset::new(vec![Outcome::new("y", y)], "D", d, vec![Covariate::new("X", x)]).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn written_csv_reads_back(ds in dataset()) {
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        // Independent reader: plain comma split.
        let mut lines = text.lines();
        prop_assert_eq!(lines.next().unwrap(), "y,D,X");
        let y = &ds.outcomes()[0].values;
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            prop_assert_eq!(cells.len(), 3);
            match y[i] {
                None => prop_assert_eq!(cells[0], ""),
                Some(v) => prop_assert!(close(cells[0].parse::<f64>().unwrap(), v)),
            }
            prop_assert_eq!(cells[1].parse::<u8>().unwrap(), ds.treatment()[i]);
            prop_assert!(close(cells[2].parse::<f64>().unwrap(), ds.covariates()[0].values[i]));
            rows += 1;
        }
        prop_assert_eq!(rows, ds.n_rows());

        // And our own loader restores the dataset exactly.
        let spec = ModelSpec::new(&["y"], "D").with_lcvars(&["X"]);
        let back = dataset_from_table(&read_table(text.as_bytes()).unwrap(), &spec).unwrap();
        prop_assert_eq!(back, ds);
    }
}
