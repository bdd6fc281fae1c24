#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <doctest.h>

#include "clp/rng.hpp"
#include "clp/tensor.hpp"
#include "clp/tokenizer.hpp"

namespace clp::test {

// Tokenize generated text without the reinterpret_cast noise at call sites.
inline Corpus text_corpus(const std::string& text, std::string name) {
    return tokenize_bytes({reinterpret_cast<const uint8_t*>(text.data()), text.size()},
                          std::move(name));
}

// Self-deleting scratch directory for artifact-producing tests.
class TmpDir {
public:
    explicit TmpDir(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        auto base = std::filesystem::temp_directory_path();
        path_ = base / ("clp-" + tag + "-" + std::to_string(::getpid()) + "-" +
                        std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path_);
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TmpDir(const TmpDir&) = delete;
    TmpDir& operator=(const TmpDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Relative closeness with an absolute noise floor. Central differences at
// h = 1e-4 carry ~1e-11 of roundoff, so differences below abs_tol say
// nothing about the analytic gradient.
inline bool grad_close(double a, double b, double rel_tol, double abs_tol = 1e-9) {
    return std::fabs(a - b) <= abs_tol + rel_tol * std::max(std::fabs(a), std::fabs(b));
}

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0,
                            bool requires_grad = true) {
    std::vector<Real> v(size_t(shape_numel(shape)));
    for (Real& x : v) x = Real(scale * rng.normal());
    return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

// Central-difference gradient check: runs `loss_fn` once under a tape to get
// analytic gradients, then probes random coordinates of each leaf. The
// callable must be a pure function of the leaves' current values.
template <typename LossFn>
void check_gradients(LossFn&& loss_fn, std::span<Tensor> leaves, Rng& rng, double rel_tol = 1e-5,
                     int probes = 4, double h = 1e-4) {
    Tape tape;
    Tensor loss = loss_fn(&tape);
    REQUIRE(loss.numel() == 1);
    tape.backward(loss);
    for (Tensor& leaf : leaves) {
        const std::vector<Real>* grad = tape.find_grad(leaf);
        REQUIRE_MESSAGE(grad != nullptr, "leaf missing from gradient map");
        for (int p = 0; p < probes; ++p) {
            size_t idx = size_t(rng.below(leaf.numel()));
            Real saved = leaf.values()[idx];
            leaf.values_mut()[idx] = Real(saved + h);
            double up = loss_fn(nullptr).item();
            leaf.values_mut()[idx] = Real(saved - h);
            double down = loss_fn(nullptr).item();
            leaf.values_mut()[idx] = saved;
            double fd = (up - down) / (2.0 * h);
            double ad = (*grad)[idx];
            INFO("coordinate ", idx, ": analytic ", ad, " vs finite-difference ", fd);
            CHECK(grad_close(ad, fd, rel_tol));
        }
    }
}

}  // namespace clp::test
