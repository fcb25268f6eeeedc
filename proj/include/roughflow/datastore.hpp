/// @file datastore.hpp
/// @brief Run configuration, binary snapshot/checkpoint formats and manifests.
///
/// Binary formats are little-endian regardless of host. Every artifact carries
/// the 64-bit FNV-1a hash of the canonical configuration that produced it.
#pragma once

#include "roughflow/autodiff.hpp"
#include "roughflow/lbm.hpp"
#include "roughflow/pinn.hpp"
#include "roughflow/surface.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace roughflow::datastore {

namespace fs = std::filesystem;

enum class RoughWalls { both, bottom, top, none };

struct SurfaceSection {
    surface::FractalSurfaceSpec spec;
    /// Realized peak-to-trough height in lattice units; 0 keeps the raw amplitude.
    double height = 0.0;
    RoughWalls walls = RoughWalls::both;
};

struct LatticeSection {
    int nx = 200;
    int ny = 50;
    double H = 48.0;  ///< mean channel gap used for Re and the nondimensional frame
    lbm::StreamwiseBoundary streamwise = lbm::StreamwiseBoundary::inlet_outlet;
};

struct FlowSection {
    double inlet_speed = 0.05;
    std::optional<double> nu;
    std::optional<double> re;
    double p0 = lbm::cs2;
    std::uint64_t steps = 20000;
    std::uint64_t snapshot_interval = 1000;
    std::uint64_t ramp_steps = 1000;  ///< inlet start-up ramp length

    /// Solver parameters with whichever of nu or Re was not given derived.
    lbm::FlowParams params(double height) const;
};

struct DatasetSection {
    std::uint64_t first_step = 16000;  ///< earliest snapshot used for training
    std::uint64_t holdout_step = 18000;  ///< snapshot withheld for evaluation
    std::size_t max_points = 2000;
};

struct NetworkSection {
    int hidden_layers = 8;
    int hidden_width = 128;
    ad::Activation activation = ad::Activation::tanh;
    bool kinetic_head = false;
    bool geometry_inputs = false;
    bool reynolds_input = false;
};

enum class SweepAxis { re, amplitude, collocation_count, activation, learning_rate, strategy };
std::string_view to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view name);

struct SweepSection {
    std::optional<SweepAxis> axis;
    std::vector<std::string> values;
};

struct RunConfig {
    SurfaceSection surface;
    LatticeSection lattice;
    FlowSection flow;
    DatasetSection dataset;
    NetworkSection network;
    pinn::TrainConfig training;  ///< training.seed mirrors run.seed
    pinn::SamplingConfig sampling;
    SweepSection sweep;
    std::uint64_t seed = 0;

    lbm::FlowParams flow_params() const { return flow.params(lattice.H); }
    void set_seed(std::uint64_t s);
};

/// Parses `section.key = value` lines. The lattice and flow sections are
/// required; other sections fall back to defaults. Errors name line and key.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const fs::path& path);
/// Canonical form: every key in fixed order, shortest round-trip reals,
/// derived quantities appended as comments.
std::string serialize_config(const RunConfig& config);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t config_hash(const RunConfig& config);
std::string hex_hash(std::uint64_t h);

// -- binary formats --------------------------------------------------------------

struct StoredSnapshot {
    lbm::FieldSnapshot snapshot;
    std::uint64_t config_hash = 0;
};

/// RFS1 followed by a u64 config-hash trailer.
std::string encode_snapshot(const lbm::FieldSnapshot& s, std::uint64_t config_hash);
StoredSnapshot decode_snapshot(std::string_view bytes);
void write_snapshot(const fs::path& path, const lbm::FieldSnapshot& s, std::uint64_t config_hash);
StoredSnapshot read_snapshot(const fs::path& path);
/// Also rejects a grid other than nx x ny.
StoredSnapshot read_snapshot(const fs::path& path, int nx, int ny);

/// Everything beyond the raw parameters needed to rebuild a surrogate.
struct ModelMetadata {
    pinn::Normalization norm;
    pinn::Scales scales;
    pinn::ModelOptions options;
};

struct Checkpoint {
    ad::ParameterSet params;
    std::uint64_t seed = 0;
    ad::Activation activation = ad::Activation::tanh;
    std::uint64_t config_hash = 0;
    std::optional<ModelMetadata> model;

    ad::NetworkSpec spec() const;
    /// Requires model metadata.
    pinn::PinnModel to_model() const;
    static Checkpoint from_model(const pinn::PinnModel& model, std::uint64_t config_hash);
};

/// RFP1, then the u64 config hash, then an optional RFN1 model block.
std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);
void write_checkpoint(const fs::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const fs::path& path);

/// Dataset manifest: `# key = value` header comments plus one snapshot path per line.
struct Manifest {
    std::map<std::string, std::string> headers;
    std::vector<std::string> paths;  ///< as written; relative paths resolve against the manifest directory
};

std::string encode_manifest(const Manifest& m);
Manifest decode_manifest(std::string_view text);
void write_manifest(const fs::path& path, const Manifest& m);
Manifest read_manifest(const fs::path& path);

struct LoadedDataset {
    std::vector<StoredSnapshot> snapshots;
    std::vector<std::string> warnings;  ///< snapshots whose config hash disagrees with the manifest
};

/// Reads every snapshot listed in a manifest.
LoadedDataset load_manifest_snapshots(const fs::path& manifest_path);

// -- file helpers ----------------------------------------------------------------

std::string read_file(const fs::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const fs::path& path, std::string_view bytes);

/// Little-endian primitive encoding, exposed for tests.
class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void raw(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }
    const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string_view raw(std::size_t n);
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    /// FormatError at the current offset.
    [[noreturn]] void fail(const std::string& msg) const;

private:
    void need(std::size_t n, const char* field);

    std::string_view bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace roughflow::datastore
