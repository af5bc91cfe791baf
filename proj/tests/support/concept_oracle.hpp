#pragma once

#include <string>
#include <vector>

// Reference implementations of the 14 sequence concepts, coded naively and
// independently of the library (own table parsing, own loops). Used to
// cross-check the production calculators.
namespace oracle {

// Values in registry order: molecular_weight, aromaticity, instability_index,
// isoelectric_point, gravy, charge_at_ph6, charge_at_ph7, helix_fraction,
// turn_fraction, sheet_fraction, molar_extinction_reduced,
// molar_extinction_oxidized, avg_hydrophilicity, avg_surface_accessibility.
std::vector<double> concept_values(const std::string& seq, const std::string& data_dir);

}  // namespace oracle
