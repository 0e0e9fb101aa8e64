#include "nef/classifier.hpp"

#include <string>

#include "nef/errors.hpp"

namespace nef {

template <class T>
NefGraph build_graph(const NefConfig& config, std::span<const T> theta)
{
    const ParamLayout layout = param_layout(config);
    if (theta.size() != layout.param_dim) {
        throw DataError("build_graph: parameter vector has " + std::to_string(theta.size()) + " entries, layout needs " +
                        std::to_string(layout.param_dim));
    }
    NefGraph g;
    const auto n_groups = layout.groups.size();
    g.group_offset.assign(n_groups + 1, 0);
    for (std::size_t i = 0; i < n_groups; ++i) g.group_offset[i + 1] = g.group_offset[i] + layout.groups[i].size;
    g.n_nodes = static_cast<std::size_t>(g.group_offset.back());
    g.node_dim = 2 + n_groups;
    g.node_features.assign(g.n_nodes * g.node_dim, 0.0);
    for (std::size_t grp = 0; grp < n_groups; ++grp) {
        for (int v = g.group_offset[grp]; v < g.group_offset[grp + 1]; ++v) {
            g.node_features[static_cast<std::size_t>(v) * g.node_dim + 2 + grp] = 1.0;
        }
    }

    int tag = 0;
    for (const auto& e : layout.entries) {
        const T* data = theta.data() + e.offset;
        const int dst0 = g.group_offset[static_cast<std::size_t>(e.dst_group)];
        if (e.is_matrix()) {
            const int src0 = g.group_offset[static_cast<std::size_t>(e.src_group)];
            for (int r = 0; r < e.rows; ++r) {
                for (int c = 0; c < e.cols; ++c) {
                    g.edge_src.push_back(src0 + c);
                    g.edge_dst.push_back(dst0 + r);
                    g.edge_tag.push_back(tag);
                    g.edge_weight.push_back(static_cast<double>(data[static_cast<std::size_t>(r) * e.cols + c]));
                }
            }
            ++tag;
        } else {
            const std::size_t channel = e.role == TensorRole::bias ? 0 : 1;
            for (int r = 0; r < e.rows; ++r) {
                g.node_features[static_cast<std::size_t>(dst0 + r) * g.node_dim + channel] += static_cast<double>(data[r]);
            }
        }
    }
    g.n_edge_tags = tag;
    return g;
}

template NefGraph build_graph<float>(const NefConfig&, std::span<const float>);
template NefGraph build_graph<double>(const NefConfig&, std::span<const double>);

} // namespace nef
