//! Transport equivalence: a full query over loopback TCP opens the same
//! rows with the same round counts as the in-process ring.

use obliq_cli::driver::Driver;
use obliq_cli::queries::Bench;
use obliq_core::runtime::TransportKind;

#[test]
fn tcp_and_inproc_agree_on_results_and_rounds() {
    let db = Bench::Q2.dataset(8, 3);
    let run_with = |transport| {
        let driver = Driver {
            transport,
            ..Driver::default()
        };
        driver.run_sql(Bench::Q2.sql(), &db, true).unwrap()
    };
    let a = run_with(TransportKind::InProcess);
    let b = run_with(TransportKind::Tcp);
    assert_eq!(a.outcome.opened, b.outcome.opened);
    for (x, y) in a.outcome.traces.iter().zip(&b.outcome.traces) {
        assert_eq!(x.total_rounds(), y.total_rounds());
        assert_eq!(x.shape(), y.shape());
    }
}
