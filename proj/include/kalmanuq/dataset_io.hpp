#pragma once

#include <string>

#include "kalmanuq/state_space.hpp"

namespace kalmanuq {

// Formats a double with 17 significant digits (round-trip exact).
std::string format_value(double v);

// Writes the dataset as CSV rows `traj_id,t,x_1..x_m,y_1..y_n` plus a JSON
// sidecar `<csv_path minus .csv>.json` holding
// {model_tag, m, n, T, count, snr_db, seed, mismatch}. Row t = 0 carries the
// initial state with zero-padded observation cells; rows t = 1..T carry
// (x_t, y_t). Values use 17 significant digits.
void write_dataset_csv(const Dataset& dataset, const std::string& csv_path);

// Reads a dataset written by write_dataset_csv. The generating model is
// rebuilt from the sidecar (tag, snr_db, mismatch). Throws IoError on missing
// files or malformed rows.
Dataset read_dataset_csv(const std::string& csv_path);

// Sidecar path for a dataset CSV path.
std::string sidecar_path(const std::string& csv_path);

}  // namespace kalmanuq
