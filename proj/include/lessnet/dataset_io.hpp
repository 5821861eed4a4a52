#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/io.hpp"
#include "lessnet/synth.hpp"

// Dataset directory layout:
//   manifest.txt             every sample directory, one per line
//   train.txt val.txt test.txt  per-split sample directories, one per line
//   <sample>/moving.ltf fixed.ltf moving_labels.ltf fixed_labels.ltf [ground_truth.ltf]
// Directory entries are relative to the dataset root.

namespace lessnet {

inline void save_sample(const std::filesystem::path& dir, const RegistrationSample<float>& s)
{
    io::write_tensor(dir / "moving.ltf", s.moving);
    io::write_tensor(dir / "fixed.ltf", s.fixed);
    io::write_tensor(dir / "moving_labels.ltf", s.moving_labels);
    io::write_tensor(dir / "fixed_labels.ltf", s.fixed_labels);
    if (s.ground_truth) io::write_tensor(dir / "ground_truth.ltf", *s.ground_truth);
}

inline RegistrationSample<float> load_sample(const std::filesystem::path& dir)
{
    RegistrationSample<float> s;
    s.id = dir.filename().string();
    s.moving = io::read_tensor(dir / "moving.ltf");
    s.fixed = io::read_tensor(dir / "fixed.ltf");
    s.moving_labels = io::read_tensor(dir / "moving_labels.ltf");
    s.fixed_labels = io::read_tensor(dir / "fixed_labels.ltf");
    if (std::filesystem::exists(dir / "ground_truth.ltf")) s.ground_truth = io::read_tensor(dir / "ground_truth.ltf");
    const Shape& shape = s.moving.shape();
    if (s.fixed.shape() != shape || s.moving_labels.shape() != shape || s.fixed_labels.shape() != shape)
        throw std::runtime_error(dir.string() + ": images and label maps must share one [1, S...] shape");
    return s;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        if (!l.empty()) lines.push_back(l);
    }
    return lines;
}

inline void save_dataset(const std::filesystem::path& root, const Dataset<float>& ds)
{
    std::filesystem::create_directories(root);
    std::vector<std::string> all;
    auto split = [&](const std::vector<RegistrationSample<float>>& samples, const char* file) {
        std::vector<std::string> names;
        for (const auto& s : samples) {
            save_sample(root / s.id, s);
            names.push_back(s.id);
        }
        write_lines(root / file, names);
        all.insert(all.end(), names.begin(), names.end());
    };
    split(ds.train, "train.txt");
    split(ds.val, "val.txt");
    split(ds.test, "test.txt");
    write_lines(root / "manifest.txt", all);
}

inline std::vector<RegistrationSample<float>> load_split(const std::filesystem::path& root, const std::string& split)
{
    if (split != "train" && split != "val" && split != "test")
        throw std::invalid_argument("split must be train, val or test, got " + split);
    std::vector<RegistrationSample<float>> out;
    for (const auto& name : read_lines(root / (split + ".txt"))) out.push_back(load_sample(root / name));
    return out;
}

inline Dataset<float> load_dataset(const std::filesystem::path& root)
{
    return Dataset<float>{load_split(root, "train"), load_split(root, "val"), load_split(root, "test")};
}

} // namespace lessnet
