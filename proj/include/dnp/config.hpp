#pragma once
#include <string>
#include <utility>
#include <vector>

#include "dnp/infer.hpp"
#include "dnp/train.hpp"

namespace dnp {

// Ordered sectioned key-value document ([scheme]/[model]/[train]/[apply]).
struct ConfigDoc {
    using Section = std::vector<std::pair<std::string, std::string>>;
    std::vector<std::pair<std::string, Section>> sections;

    const Section* find(const std::string& name) const;
    bool operator==(const ConfigDoc& o) const { return sections == o.sections; }
};

ConfigDoc parse_config(const std::string& text);
ConfigDoc load_config(const std::string& path);
std::string serialize_config(const ConfigDoc& doc);

struct FullConfig {
    SchemeConfig scheme;
    ModelConfig model;
    LabelSpec labels;
    TrainConfig train;
    InferConfig apply;
};

// Validates section/key names and exactly-one-of constraints.
FullConfig interpret_config(const ConfigDoc& doc);

} // namespace dnp
