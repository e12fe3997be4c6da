// Writes a synthetic 28x28 digit corpus as standard IDX pairs, for
// fully-offline runs of the MNIST-layout pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "jmvl/data.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthesize an MNIST-layout digit corpus (IDX pairs)"};
    std::string out_dir = "data";
    std::size_t train_items = 60000, test_items = 10000;
    std::uint64_t seed = 20260101;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--train-items", train_items, "training items");
    app.add_option("--test-items", test_items, "test items");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(out_dir);
        auto train = jmvl::make_synthetic_digits(train_items, jmvl::derive_seed(seed, {1}));
        auto test = jmvl::make_synthetic_digits(test_items, jmvl::derive_seed(seed, {2}));
        jmvl::write_mnist(train, out_dir + "/train-images.idx", out_dir + "/train-labels.idx");
        jmvl::write_mnist(test, out_dir + "/test-images.idx", out_dir + "/test-labels.idx");
        std::cerr << "wrote " << train.n << " train and " << test.n << " test items to " << out_dir
                  << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
