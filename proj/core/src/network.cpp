#include "tcs/network.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

namespace tcs {

const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::pipeline: return "pipeline";
    case EdgeKind::pump: return "pump";
    case EdgeKind::producer: return "producer";
    case EdgeKind::valve: return "valve";
    case EdgeKind::dpr: return "dpr";
    case EdgeKind::consumer: return "consumer";
  }
  return "?";
}

const char* to_string(DhnSide s) {
  return s == DhnSide::supply ? "supply" : "return";
}

const char* to_string(NetworkKind n) {
  switch (n) {
    case NetworkKind::epn: return "epn";
    case NetworkKind::dhn: return "dhn";
    case NetworkKind::converter: return "converter";
  }
  return "?";
}

const char* to_string(Role r) {
  switch (r) {
    case Role::producer: return "producer";
    case Role::consumer: return "consumer";
    case Role::storage: return "storage";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

template <typename T>
std::string str(const T& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

int CoupledNetwork::bus_index(int id) const {
  auto it = bus_ids_.find(id);
  if (it == bus_ids_.end()) fail("epn.buses: unknown bus id " + str(id));
  return it->second;
}

int CoupledNetwork::node_index(int id) const {
  auto it = node_ids_.find(id);
  if (it == node_ids_.end()) fail("dhn.nodes: unknown node id " + str(id));
  return it->second;
}

int CoupledNetwork::edge_index(int id) const {
  auto it = edge_ids_.find(id);
  if (it == edge_ids_.end()) fail("dhn.edges: unknown edge id " + str(id));
  return it->second;
}

int CoupledNetwork::participant_index(const std::string& id) const {
  auto it = participant_ids_.find(id);
  if (it == participant_ids_.end()) fail("participants: unknown participant id '" + id + "'");
  return it->second;
}

std::vector<int> CoupledNetwork::edges_of_kind(EdgeKind k) const {
  std::vector<int> out;
  for (int e = 0; e < edge_count(); ++e)
    if (edges[e].kind == k) out.push_back(e);
  return out;
}

std::vector<int> CoupledNetwork::participants_at_bus(int bus_idx) const {
  std::vector<int> out;
  for (int n = 0; n < static_cast<int>(participants.size()); ++n) {
    const auto& p = participants[n];
    if (p.bus >= 0 && p.bus == bus_idx) out.push_back(n);
  }
  return out;
}

void CoupledNetwork::finalize() {
  bus_ids_.clear();
  node_ids_.clear();
  edge_ids_.clear();
  participant_ids_.clear();

  const int nb = bus_count();
  for (int i = 0; i < nb; ++i) {
    if (!bus_ids_.emplace(buses[i].id, i).second)
      fail("epn.buses[" + str(i) + "].id: duplicate bus id " + str(buses[i].id));
    if (buses[i].v_min >= buses[i].v_max)
      fail("epn.buses[" + str(i) + "]: v_min_pu must be below v_max_pu");
  }

  reference_bus = -1;
  for (int i = 0; i < nb; ++i) {
    if (buses[i].is_reference) {
      if (reference_bus >= 0) fail("epn.buses: more than one reference bus");
      reference_bus = i;
    }
  }
  if (nb > 0 && reference_bus < 0) fail("epn.buses: no reference bus flagged");

  g_bus = Eigen::MatrixXd::Zero(nb, nb);
  b_bus = Eigen::MatrixXd::Zero(nb, nb);
  for (size_t f = 0; f < feeders.size(); ++f) {
    const auto& fd = feeders[f];
    auto fi = bus_ids_.find(fd.from_bus);
    auto ti = bus_ids_.find(fd.to_bus);
    if (fi == bus_ids_.end())
      fail("epn.feeders[" + str(f) + "].from_bus: unknown bus id " + str(fd.from_bus));
    if (ti == bus_ids_.end())
      fail("epn.feeders[" + str(f) + "].to_bus: unknown bus id " + str(fd.to_bus));
    if (fi->second == ti->second)
      fail("epn.feeders[" + str(f) + "]: from_bus equals to_bus");
    const int a = fi->second, b = ti->second;
    g_bus(a, a) += fd.conductance;
    g_bus(b, b) += fd.conductance;
    g_bus(a, b) -= fd.conductance;
    g_bus(b, a) -= fd.conductance;
    b_bus(a, a) += fd.susceptance;
    b_bus(b, b) += fd.susceptance;
    b_bus(a, b) -= fd.susceptance;
    b_bus(b, a) -= fd.susceptance;
  }

  const int nn = node_count();
  const int ne = edge_count();
  for (int i = 0; i < nn; ++i) {
    if (!node_ids_.emplace(nodes[i].id, i).second)
      fail("dhn.nodes[" + str(i) + "].id: duplicate node id " + str(nodes[i].id));
    if (nodes[i].t_min >= nodes[i].t_max)
      fail("dhn.nodes[" + str(i) + "]: t_min_c must be below t_max_c");
  }
  for (int e = 0; e < ne; ++e) {
    if (!edge_ids_.emplace(edges[e].id, e).second)
      fail("dhn.edges[" + str(e) + "].id: duplicate edge id " + str(edges[e].id));
  }

  std::vector<Eigen::Triplet<double>> tri;
  tri.reserve(2 * ne);
  for (int e = 0; e < ne; ++e) {
    auto& ed = edges[e];
    auto fi = node_ids_.find(ed.from_node);
    auto ti = node_ids_.find(ed.to_node);
    if (fi == node_ids_.end())
      fail("dhn.edges[" + str(e) + "].from_node: unknown node id " + str(ed.from_node));
    if (ti == node_ids_.end())
      fail("dhn.edges[" + str(e) + "].to_node: unknown node id " + str(ed.to_node));
    if (fi->second == ti->second)
      fail("dhn.edges[" + str(e) + "]: from_node equals to_node");
    tri.emplace_back(fi->second, e, -1.0);
    tri.emplace_back(ti->second, e, +1.0);
    if (ed.m_min < 0.0)
      fail("dhn.edges[" + str(e) + "].m_min_kg_s: must be >= 0 (check valve)");
    if (ed.m_min >= ed.m_max)
      fail("dhn.edges[" + str(e) + "]: m_min_kg_s must be below m_max_kg_s");
    if (ed.dp_min > ed.dp_max)
      fail("dhn.edges[" + str(e) + "]: dp_min_bar must not exceed dp_max_bar");
    if (ed.kind == EdgeKind::pipeline && !ed.pipeline)
      fail("dhn.edges[" + str(e) + "]: pipeline edge without pipeline parameters");
    if (ed.kind == EdgeKind::valve && !ed.valve)
      fail("dhn.edges[" + str(e) + "]: valve edge without valve parameters");
    if (ed.kind == EdgeKind::pipeline) {
      const auto& p = *ed.pipeline;
      if (p.length <= 0) fail("dhn.edges[" + str(e) + "].length_m: must be > 0");
      if (p.cross_section <= 0) fail("dhn.edges[" + str(e) + "].cross_section_m2: must be > 0");
      if (p.diameter <= 0) fail("dhn.edges[" + str(e) + "].diameter_m: must be > 0");
      if (p.roughness < 0) fail("dhn.edges[" + str(e) + "].roughness_m: must be >= 0");
      if (p.thermal_resistance <= 0)
        fail("dhn.edges[" + str(e) + "].thermal_resistance_m_k_w: must be > 0");
      if (p.reference_flow <= 0)
        fail("dhn.edges[" + str(e) + "].reference_flow_kg_s: must be > 0");
      if (ed.m_min <= 0)
        fail("dhn.edges[" + str(e) + "].m_min_kg_s: pipelines need a positive floor");
    }
    if (ed.kind == EdgeKind::producer && ed.m_min <= 0)
      fail("dhn.edges[" + str(e) + "].m_min_kg_s: producers need a positive floor");
  }
  incidence.resize(nn, ne);
  incidence.setFromTriplets(tri.begin(), tri.end());

  // Connectivity and spanning tree over the undirected DHN graph, BFS from
  // the lowest-id node. Cotree edges close the fundamental loops.
  std::vector<std::vector<std::pair<int, int>>> adj(nn);  // node -> (edge, other node)
  for (int e = 0; e < ne; ++e) {
    const int a = node_index(edges[e].from_node);
    const int b = node_index(edges[e].to_node);
    adj[a].push_back({e, b});
    adj[b].push_back({e, a});
  }
  std::vector<int> parent_edge(nn, -1), parent_node(nn, -1), depth(nn, -1);
  std::vector<char> in_tree(ne, 0);
  if (nn > 0) {
    int root = 0;
    for (int i = 1; i < nn; ++i)
      if (nodes[i].id < nodes[root].id) root = i;
    reference_node = root;
    std::deque<int> q{root};
    depth[root] = 0;
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (auto [e, v] : adj[u]) {
        if (depth[v] >= 0) continue;
        depth[v] = depth[u] + 1;
        parent_edge[v] = e;
        parent_node[v] = u;
        in_tree[e] = 1;
        q.push_back(v);
      }
    }
    for (int i = 0; i < nn; ++i)
      if (depth[i] < 0)
        fail("dhn: node id " + str(nodes[i].id) + " is disconnected from the rest of the network");
  }

  // Every cotree edge closes one fundamental loop: the edge itself (+1,
  // defining the loop direction) plus the tree path head -> tail. A tree edge
  // enters with +1 when the walk follows its orientation, -1 against.
  auto step_sign = [&](int edge, int walk_from) {
    return node_index(edges[edge].from_node) == walk_from ? +1.0 : -1.0;
  };
  std::vector<Eigen::Triplet<double>> ltri;
  int nloops = 0;
  for (int e = 0; e < ne; ++e) {
    if (in_tree[e]) continue;
    const int tail = node_index(edges[e].from_node);
    const int head = node_index(edges[e].to_node);
    ltri.emplace_back(nloops, e, +1.0);
    int a = head, b = tail;
    while (depth[a] > depth[b]) {  // walk the head branch towards the root
      ltri.emplace_back(nloops, parent_edge[a], step_sign(parent_edge[a], a));
      a = parent_node[a];
    }
    while (depth[b] > depth[a]) {  // tail branch, traversed parent -> child
      ltri.emplace_back(nloops, parent_edge[b], step_sign(parent_edge[b], parent_node[b]));
      b = parent_node[b];
    }
    while (a != b) {
      ltri.emplace_back(nloops, parent_edge[a], step_sign(parent_edge[a], a));
      ltri.emplace_back(nloops, parent_edge[b], step_sign(parent_edge[b], parent_node[b]));
      a = parent_node[a];
      b = parent_node[b];
    }
    ++nloops;
  }
  loop_basis.resize(nloops, ne);
  loop_basis.setFromTriplets(ltri.begin(), ltri.end());

  std::vector<Eigen::Triplet<double>> ptri;
  std::vector<int> path_owner_count(ne, 0);
  for (size_t p = 0; p < paths.size(); ++p) {
    const auto& cp = paths[p];
    if (cp.edges.empty()) fail("dhn.control_paths[" + str(p) + "].edges: empty path");
    if (cp.edges.size() != cp.orientation.size())
      fail("dhn.control_paths[" + str(p) + "]: edges and orientation size mismatch");
    for (size_t j = 0; j < cp.edges.size(); ++j) {
      const int e = edge_index(cp.edges[j]);
      if (cp.orientation[j] != 1 && cp.orientation[j] != -1)
        fail("dhn.control_paths[" + str(p) + "].orientation[" + str(j) + "]: must be +1 or -1");
      ptri.emplace_back(static_cast<int>(p), e, static_cast<double>(cp.orientation[j]));
    }
    const int reg = edge_index(cp.regulated_by);
    const auto kind = edges[reg].kind;
    if (kind != EdgeKind::pump && kind != EdgeKind::dpr)
      fail("dhn.control_paths[" + str(p) + "].regulated_by: edge id " + str(cp.regulated_by) +
           " is a " + std::string(to_string(kind)) + ", expected pump or dpr");
    if (++path_owner_count[reg] > 1)
      fail("dhn.control_paths[" + str(p) + "]: edge id " + str(cp.regulated_by) +
           " already regulates another path");
    if (cp.dp_setpoint_bar.empty())
      fail("dhn.control_paths[" + str(p) + "].dp_setpoint_bar: empty schedule");
  }
  for (int e = 0; e < ne; ++e) {
    if (edges[e].kind == EdgeKind::dpr && path_owner_count[e] == 0)
      fail("dhn.control_paths: dpr edge id " + str(edges[e].id) + " regulates no control path");
  }
  path_matrix.resize(static_cast<int>(paths.size()), ne);
  path_matrix.setFromTriplets(ptri.begin(), ptri.end());

  // Participant wiring.
  std::vector<int> edge_owner(ne, -1);
  for (size_t n = 0; n < participants.size(); ++n) {
    auto& pp = participants[n];
    if (pp.id.empty()) fail("participants[" + str(n) + "].id: empty id");
    if (!participant_ids_.emplace(pp.id, static_cast<int>(n)).second)
      fail("participants[" + str(n) + "].id: duplicate participant id '" + pp.id + "'");
    const bool has_epn = pp.network == NetworkKind::epn || pp.network == NetworkKind::converter;
    const bool has_dhn = pp.network == NetworkKind::dhn || pp.network == NetworkKind::converter;
    if (has_epn) {
      auto it = bus_ids_.find(pp.bus);
      if (it == bus_ids_.end())
        fail("participants['" + pp.id + "'].bus: unknown bus id " + str(pp.bus));
      pp.bus = it->second;
    } else if (pp.bus != -1) {
      fail("participants['" + pp.id + "'].bus: dhn participant must not set a bus");
    }
    if (has_dhn) {
      auto si = node_ids_.find(pp.supply_node);
      auto ri = node_ids_.find(pp.return_node);
      if (si == node_ids_.end())
        fail("participants['" + pp.id + "'].supply_node: unknown node id " + str(pp.supply_node));
      if (ri == node_ids_.end())
        fail("participants['" + pp.id + "'].return_node: unknown node id " + str(pp.return_node));
      pp.supply_node = si->second;
      pp.return_node = ri->second;
      auto ei = edge_ids_.find(pp.dhn_edge);
      if (ei == edge_ids_.end())
        fail("participants['" + pp.id + "'].dhn_edge: unknown edge id " + str(pp.dhn_edge));
      pp.dhn_edge = ei->second;
      const auto& ed = edges[pp.dhn_edge];
      const bool heat_source = pp.network == NetworkKind::converter || pp.role == Role::producer;
      if (heat_source && ed.kind != EdgeKind::producer)
        fail("participants['" + pp.id + "'].dhn_edge: heat producers must own a producer edge");
      if (!heat_source && ed.kind != EdgeKind::consumer)
        fail("participants['" + pp.id + "'].dhn_edge: heat consumers must own a consumer edge");
      if (edge_owner[pp.dhn_edge] >= 0)
        fail("participants['" + pp.id + "'].dhn_edge: edge id " + str(ed.id) +
             " already owned by '" + participants[edge_owner[pp.dhn_edge]].id + "'");
      edge_owner[pp.dhn_edge] = static_cast<int>(n);
      if (!heat_source && !pp.curve)
        fail("participants['" + pp.id + "']: heat consumers need a characteristic curve");
    }
    if (pp.network == NetworkKind::converter) {
      if (pp.coupling <= 0)
        fail("participants['" + pp.id + "'].coupling: converter factor must be > 0");
      if (pp.electric_sign != 1 && pp.electric_sign != -1)
        fail("participants['" + pp.id + "'].electric_sign: must be +1 or -1");
    }
  }
  for (int e = 0; e < ne; ++e) {
    const auto k = edges[e].kind;
    if ((k == EdgeKind::producer || k == EdgeKind::consumer) && edge_owner[e] < 0)
      fail("dhn.edges: " + std::string(to_string(k)) + " edge id " + str(edges[e].id) +
           " has no owning participant");
  }

  // Hydraulic degrees of freedom: flows and pressure drops are pinned by
  // continuity, loops, component laws, control paths and the consumer flow
  // equations; every valve must therefore be matched by exactly one consumer.
  const int n_valves = static_cast<int>(edges_of_kind(EdgeKind::valve).size());
  const int n_consumers = static_cast<int>(edges_of_kind(EdgeKind::consumer).size());
  if (nn > 0 && n_valves != n_consumers)
    fail("dhn: hydraulic degree-of-freedom mismatch, " + str(n_valves) + " control valves vs " +
         str(n_consumers) + " consumers");
}

}  // namespace tcs
