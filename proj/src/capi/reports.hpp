#pragma once

#include <json.hpp>

#include "attnlimits/constructions.hpp"
#include "attnlimits/evaluation.hpp"
#include "attnlimits/formal_langs.hpp"
#include "attnlimits/restriction.hpp"
#include "attnlimits/sensitivity.hpp"
#include "attnlimits/transformer.hpp"

namespace attnlimits::reports {

using nlohmann::json;

// Non-finite doubles become null.
json number(double x);
json vector(const Vec& v);
json matrix(const Mat& m);  // row-major nested arrays

json config(const tf::ModelConfig& cfg);
tf::ModelConfig config_from(const json& j, tf::ModelConfig base = {});
json model_info(const tf::Model& model);
json trace(const tf::Model& model, const std::string& word, const tf::ForwardTrace& trace, bool full);

json construction(const constructions::ConstructionReport& r);
json dataset_record(const langs::DatasetRecord& r);

json failure(const restriction::CTransformer& ct, const restriction::FailureReport& r);

json decay(const sensitivity::DecayCurve& c, const sensitivity::BoundConstants& last);
json ce(const evaluation::CEReport& r);
json height_chain(const langs::HeightChainStats& s);

}  // namespace attnlimits::reports
