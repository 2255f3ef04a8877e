#include "camil/container.hpp"
#include "camil/wsi_graph.hpp"

namespace camil {

namespace {

constexpr std::string_view kBagMagic = "CAMILBAG";

std::size_t bag_payload_len(const nlohmann::json& h) {
  return h.at("n").get<std::size_t>() * h.at("d").get<std::size_t>();
}

}  // namespace

void save_bag(const FeatureBag& bag, const std::filesystem::path& path) {
  nlohmann::json h;
  h["slide_id"] = bag.grid.slide_id;
  h["n"] = bag.n();
  h["d"] = bag.d();
  h["grid_width"] = bag.grid.width;
  h["grid_height"] = bag.grid.height;
  h["slide_label"] = bag.slide_label;
  auto tiles = nlohmann::json::array();
  for (const TileCoord& t : bag.grid.tiles) tiles.push_back({t.row, t.col});
  h["tiles"] = std::move(tiles);
  if (bag.tile_labels) {
    auto labels = nlohmann::json::array();
    for (TileLabel l : *bag.tile_labels) labels.push_back(static_cast<int>(l));
    h["tile_labels"] = std::move(labels);
  } else {
    h["tile_labels"] = nullptr;
  }
  io::write_container(path, kBagMagic, h, bag.features.data());
}

FeatureBag load_bag(const std::filesystem::path& path) {
  io::Container c = io::read_container(path, kBagMagic, bag_payload_len);
  const nlohmann::json& h = c.header;
  FeatureBag bag;
  try {
    const auto n = h.at("n").get<std::size_t>();
    const auto d = h.at("d").get<std::size_t>();
    bag.grid.slide_id = h.at("slide_id").get<std::string>();
    bag.grid.width = h.at("grid_width").get<int>();
    bag.grid.height = h.at("grid_height").get<int>();
    bag.slide_label = h.at("slide_label").get<int>();
    for (const auto& t : h.at("tiles")) bag.grid.tiles.push_back({t.at(0).get<int>(), t.at(1).get<int>()});
    if (!h.at("tile_labels").is_null()) {
      std::vector<TileLabel> labels;
      for (const auto& l : h.at("tile_labels")) {
        const int v = l.get<int>();
        if (v != 0 && v != 1) throw ParseError("tile label must be 0 or 1", 9);
        labels.push_back(static_cast<TileLabel>(v));
      }
      bag.tile_labels = std::move(labels);
    }
    bag.features = Matrix(n, d, std::move(c.payload));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bag header: ") + e.what(), 9);
  }
  try {
    bag.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("inconsistent bag header: ") + e.what(), 9);
  }
  return bag;
}

}  // namespace camil
