// Writes a procedurally generated handwritten-style digit corpus in the MNIST
// IDX layout (train-images-idx3-ubyte etc.) so the pipeline can run in
// environments without the original files. Real MNIST IDX files are a drop-in
// replacement.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "terse/data.hpp"
#include "terse/digits.hpp"

int main(int argc, char** argv) {
    std::string out = "data";
    int n_train = 12000, n_test = 10000;
    std::uint64_t seed = 20240401;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        auto val = [&](const char* flag) -> const char* {
            if (i + 1 >= argc) {
                std::fprintf(stderr, "flag %s needs a value\n", flag);
                std::exit(2);
            }
            return argv[++i];
        };
        if (a == "--out") out = val("--out");
        else if (a == "--train") n_train = std::atoi(val("--train"));
        else if (a == "--test") n_test = std::atoi(val("--test"));
        else if (a == "--seed") seed = std::strtoull(val("--seed"), nullptr, 10);
        else {
            std::fprintf(stderr,
                         "usage: terse-mkdigits [--out DIR] [--train N] [--test N] [--seed S]\n");
            return a == "--help" || a == "-h" ? 0 : 2;
        }
    }
    try {
        std::filesystem::create_directories(out);
        const terse::DatasetSplit train = terse::make_digit_corpus(n_train, seed);
        const terse::DatasetSplit test = terse::make_digit_corpus(n_test, seed ^ 0x7e57da7aull);
        terse::save_idx(out + "/train-images-idx3-ubyte", out + "/train-labels-idx1-ubyte", train);
        terse::save_idx(out + "/t10k-images-idx3-ubyte", out + "/t10k-labels-idx1-ubyte", test);
        std::printf("wrote %d train / %d test digits under %s\n", n_train, n_test, out.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
