// End-to-end use of the library: synthesize a small city, fit EIRPs, train a
// narrow correction network and compare it with the UMa B baseline on a
// held-out split, then write one REM layer as a PGM heat map.

#include <cmath>
#include <filesystem>
#include <iostream>

#include "dragon/features.hpp"
#include "dragon/io/text.hpp"
#include "dragon/neural/train.hpp"
#include "dragon/predictor.hpp"
#include "dragon/rem.hpp"
#include "dragon/scenario_io.hpp"
#include "dragon/synth.hpp"

namespace fs = std::filesystem;
using namespace dragon;

int main() {
    const fs::path dir = fs::temp_directory_path() / "dragon_quickstart";
    fs::create_directories(dir);

    SynthParams p;
    p.n_buildings = 30;
    p.n_measurements = 1500;
    p.seed = 7;
    const SynthOutput synth = synthesize(p);
    io::write_file((dir / "scenario.json").string(), synth.scenario_json);
    io::write_file((dir / "terrain.asc").string(), synth.terrain_asc);
    io::write_file((dir / "measurements.csv").string(), synth.measurements_csv);

    Scenario s = load_scenario((dir / "scenario.json").string(), (dir / "terrain.asc").string());
    const auto measurements = load_measurements((dir / "measurements.csv").string(), s);
    const ChannelParams channel;
    const Scenario unfitted = s;
    for (const auto& c : unfitted.cells()) {
        const double eirp = fit_eirp(measurements, unfitted, c, channel);
        s = s.with_cell_eirp(c.id, eirp);
        std::cout << c.id << ": fitted EIRP " << eirp << " dBm\n";
    }

    const auto samples = extract_samples(s, measurements, channel);
    const DatasetSplit split = split_dataset(samples, 7);
    const auto train_set = gather<std::size_t>(samples, split.train);
    const auto val_set = gather<std::size_t>(samples, split.val);
    const auto test_set = gather<std::size_t>(samples, split.test);

    nn::ArchitectureConfig arch;  // narrower than the default to keep the run short
    arch.cnn_filters = {8, 8, 8, 8, 8, 1};
    arch.feature_nn = {64, 32};
    nn::TrainConfig cfg;
    cfg.max_epochs = 6;
    cfg.seed = 7;
    const auto result = nn::train(train_set, val_set, arch, cfg, [](int epoch, double tr, double va) {
        std::cout << "epoch " << epoch << ": train " << std::sqrt(tr) << " dB, val " << std::sqrt(va) << " dB RMSE\n";
    });

    const DragonPredictor dragon(result.checkpoint, channel);
    const auto corrected = dragon.predict_samples(s, test_set);
    std::vector<double> baseline, measured;
    for (const auto& smp : test_set) {
        baseline.push_back(predicted_rsrp(smp, s.cell(smp.cell_id), 0.0));
        measured.push_back(baseline.back() + *smp.target_delta_db);
    }
    std::cout << "test RMSE: UMa B " << evaluate(baseline, measured).rmse_db << " dB, corrected "
              << evaluate(corrected, measured).rmse_db << " dB\n";

    const std::string cell = s.cells().front().id;
    const std::vector<std::string> ids{cell};
    const REMGrid grid = generate_rem(s, dragon, ids, 20.0);
    io::write_file((dir / ("rem_" + cell + ".pgm")).string(), heatmap_pgm(grid, grid.layers.at(cell)));
    std::cout << "wrote " << grid.rows << " x " << grid.cols << " REM to " << (dir / ("rem_" + cell + ".pgm")) << "\n";
}
