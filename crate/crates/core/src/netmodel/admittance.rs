use nalgebra::DMatrix;
use num_complex::Complex64;

use super::network::{BusId, NetworkModel};

/// Dense symmetric bus admittance matrix `Y = G + jB`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn entry(&self, i: BusId, k: BusId) -> Complex64 {
        self.y[(i.0, k.0)]
    }

    pub fn g(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].re
    }

    pub fn b(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].im
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn row_sum(&self, i: BusId) -> Complex64 {
        self.y.row(i.0).iter().sum()
    }
}

/// `Y_ii = y_i + sum_k y_ik`, `Y_ik = -y_ik`.
pub fn build_admittance(net: &NetworkModel) -> AdmittanceMatrix {
    let n = net.bus_count();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (i, bus) in net.buses().iter().enumerate() {
        y[(i, i)] = Complex64::new(bus.shunt.0, bus.shunt.1);
    }
    for l in net.lines() {
        let (a, b) = (l.from.0, l.to.0);
        let yl = l.admittance();
        y[(a, a)] += yl;
        y[(b, b)] += yl;
        y[(a, b)] -= yl;
        y[(b, a)] -= yl;
    }
    AdmittanceMatrix { y }
}
