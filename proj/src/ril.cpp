#include "rd/ril.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

namespace rd {

namespace {

constexpr char kMagic[4] = {'R', 'I', 'L', 'T'};
constexpr std::uint16_t kVersion = 1;

// Little-endian POD append; the container format is little-endian and so
// is every target this builds on.
template <typename T>
void put(std::string& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const char*& p, const char* end) {
    if (p + sizeof(T) > end) throw FormatError("RIL: truncated record");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
}

std::vector<std::uint32_t> top_k_indices(const Vec64& probs, std::uint32_t k) {
    std::vector<std::uint32_t> ids(probs.size());
    std::iota(ids.begin(), ids.end(), 0u);
    // descending probability, ties broken by ascending class id
    std::stable_sort(ids.begin(), ids.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return probs[a] > probs[b]; });
    ids.resize(k);
    return ids;
}

}  // namespace

std::string mode_name(SparsifyMode m) {
    switch (m) {
        case SparsifyMode::Full: return "full";
        case SparsifyMode::MS: return "ms";
        case SparsifyMode::MR: return "mr";
    }
    return "?";
}

SparsifyMode mode_from_name(const std::string& name) {
    if (name == "full") return SparsifyMode::Full;
    if (name == "ms") return SparsifyMode::MS;
    if (name == "mr") return SparsifyMode::MR;
    throw ConfigError("unknown sparsify mode: " + name);
}

SparsifiedLabel sparsify_ms(const Distribution& p, std::uint32_t k) {
    const std::uint32_t c = static_cast<std::uint32_t>(p.class_count());
    if (k == 0 || k >= c) {
        throw ConfigError("sparsify_ms: need 0 < K < C (use full mode for K >= C)");
    }
    SparsifiedLabel out;
    out.mode = SparsifyMode::MS;
    out.class_count = c;
    out.top_indices = top_k_indices(p.probs, k);
    double top_mass = 0.0;
    for (std::uint32_t id : out.top_indices) top_mass += p.probs[id];
    for (std::uint32_t id : out.top_indices) {
        out.top_probs.push_back(static_cast<float>(p.probs[id]));
    }
    out.tail_value = static_cast<float>((1.0 - top_mass) / (c - k));
    return out;
}

SparsifiedLabel sparsify_mr(const Distribution& p, std::uint32_t k) {
    const std::uint32_t c = static_cast<std::uint32_t>(p.class_count());
    if (k == 0 || k >= c) {
        throw ConfigError("sparsify_mr: need 0 < K < C (use full mode for K >= C)");
    }
    SparsifiedLabel out;
    out.mode = SparsifyMode::MR;
    out.class_count = c;
    out.top_indices = top_k_indices(p.probs, k);
    double top_mass = 0.0;
    for (std::uint32_t id : out.top_indices) top_mass += p.probs[id];
    if (top_mass <= 0.0) {
        throw InvalidInputError("sparsify_mr: top-K mass is zero");
    }
    for (std::uint32_t id : out.top_indices) {
        out.top_probs.push_back(static_cast<float>(p.probs[id] / top_mass));
    }
    out.tail_value = 0.0f;
    return out;
}

SparsifiedLabel sparsify_full(const Distribution& p) {
    SparsifiedLabel out;
    out.mode = SparsifyMode::Full;
    out.class_count = static_cast<std::uint32_t>(p.class_count());
    out.full_probs.reserve(p.class_count());
    for (double v : p.probs) out.full_probs.push_back(static_cast<float>(v));
    return out;
}

SparsifiedLabel sparsify(const Distribution& p, SparsifyMode mode, std::uint32_t k) {
    switch (mode) {
        case SparsifyMode::Full: return sparsify_full(p);
        case SparsifyMode::MS: return sparsify_ms(p, k);
        case SparsifyMode::MR: return sparsify_mr(p, k);
    }
    throw ConfigError("sparsify: bad mode");
}

Distribution densify(const SparsifiedLabel& label) {
    Distribution out;
    if (label.mode == SparsifyMode::Full) {
        out.probs.assign(label.full_probs.begin(), label.full_probs.end());
        return out;
    }
    out.probs.assign(label.class_count, static_cast<double>(label.tail_value));
    for (std::size_t i = 0; i < label.top_indices.size(); ++i) {
        out.probs[label.top_indices[i]] = label.top_probs[i];
    }
    return out;
}

double info_weight(const Distribution& p) {
    const std::size_t c = p.class_count();
    if (c == 0) throw ShapeError("info_weight: empty distribution");
    if (c == 1) return 1.0;
    const double w = 1.0 - entropy(p) / std::log(static_cast<double>(c));
    return std::clamp(w, 0.0, 1.0);
}

std::size_t record_byte_size(SparsifyMode mode, std::uint32_t k) {
    // image_id u64 | crop 4xf32 | tag u8 | w f32 | pseudo u32 | K x (u32,f32) | tail f32 (MS)
    std::size_t n = 8 + 16 + 1 + 4 + 4 + static_cast<std::size_t>(k) * 8;
    if (mode == SparsifyMode::MS) n += 4;
    return n;
}

std::uint64_t write_table(const std::vector<RilRecord>& records, RilHeader header,
                          const std::string& path) {
    header.version = kVersion;
    header.record_count = records.size();
    const std::uint32_t k = header.top_k;
    for (const RilRecord& r : records) {
        if (r.label.mode != header.mode || r.label.class_count != header.class_count) {
            throw ConfigError("write_table: record label inconsistent with header");
        }
        if (header.mode == SparsifyMode::Full) {
            if (r.label.full_probs.size() != header.class_count || k != header.class_count) {
                throw ConfigError("write_table: full-mode record size mismatch");
            }
        } else if (r.label.top_indices.size() != k || r.label.top_probs.size() != k) {
            throw ConfigError("write_table: record top-K size mismatch");
        }
        if (!r.crop.valid()) throw ConfigError("write_table: invalid crop box");
    }

    std::string buf;
    buf.append(kMagic, 4);
    put(buf, header.version);
    put(buf, static_cast<std::uint8_t>(header.mode));
    put(buf, header.class_count);
    put(buf, header.top_k);
    put(buf, header.crops_per_image);
    put(buf, header.record_count);

    const std::size_t rec_size = record_byte_size(header.mode, k);
    std::uint64_t offset = buf.size() + records.size() * sizeof(std::uint64_t);
    for (std::size_t i = 0; i < records.size(); ++i) {
        put(buf, offset + i * rec_size);
    }
    for (const RilRecord& r : records) {
        put(buf, r.image_id);
        put(buf, r.crop.x);
        put(buf, r.crop.y);
        put(buf, r.crop.w);
        put(buf, r.crop.h);
        put(buf, static_cast<std::uint8_t>(r.augment));
        put(buf, r.info_weight);
        put(buf, r.pseudo_label);
        if (header.mode == SparsifyMode::Full) {
            for (std::uint32_t c = 0; c < header.class_count; ++c) {
                put(buf, c);
                put(buf, r.label.full_probs[c]);
            }
        } else {
            for (std::uint32_t i = 0; i < k; ++i) {
                put(buf, r.label.top_indices[i]);
                put(buf, r.label.top_probs[i]);
            }
            if (header.mode == SparsifyMode::MS) put(buf, r.label.tail_value);
        }
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("write_table: cannot open " + tmp);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        out.flush();
        if (!out) {
            std::remove(tmp.c_str());
            throw IoError("write_table: write failed for " + tmp);
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("write_table: rename to " + path + " failed: " +
                      std::strerror(errno));
    }
    return buf.size();
}

RilTable RilTable::open(const std::string& path) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw IoError("RIL: cannot open " + path + ": " + std::strerror(errno));
    RilTable t;
    t.fd_ = fd;
    const off_t size = ::lseek(fd, 0, SEEK_END);
    if (size < 0) throw IoError("RIL: lseek failed");
    t.file_size_ = static_cast<std::uint64_t>(size);

    // magic 4 | version 2 | mode 1 | C 4 | K 2 | M 4 | record_count 8
    char head[25];
    if (::pread(fd, head, sizeof(head), 0) != static_cast<ssize_t>(sizeof(head))) {
        throw FormatError("RIL: file too short for header");
    }
    const char* p = head;
    const char* end = head + sizeof(head);
    char magic[4];
    std::memcpy(magic, p, 4);
    p += 4;
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("RIL: bad magic");
    t.header_.version = get<std::uint16_t>(p, end);
    if (t.header_.version != kVersion) {
        throw FormatError("RIL: unsupported version " + std::to_string(t.header_.version));
    }
    const std::uint8_t mode = get<std::uint8_t>(p, end);
    if (mode > 2) throw FormatError("RIL: bad mode byte");
    t.header_.mode = static_cast<SparsifyMode>(mode);
    t.header_.class_count = get<std::uint32_t>(p, end);
    t.header_.top_k = get<std::uint16_t>(p, end);
    t.header_.crops_per_image = get<std::uint32_t>(p, end);
    t.header_.record_count = get<std::uint64_t>(p, end);

    const std::uint64_t index_bytes = t.header_.record_count * sizeof(std::uint64_t);
    if (sizeof(head) + index_bytes > t.file_size_) {
        throw FormatError("RIL: truncated offset index");
    }
    t.offsets_.resize(t.header_.record_count);
    if (t.header_.record_count > 0 &&
        ::pread(fd, t.offsets_.data(), index_bytes, sizeof(head)) !=
            static_cast<ssize_t>(index_bytes)) {
        throw FormatError("RIL: failed to read offset index");
    }
    return t;
}

RilTable::RilTable(RilTable&& o) noexcept { *this = std::move(o); }

RilTable& RilTable::operator=(RilTable&& o) noexcept {
    if (this != &o) {
        if (fd_ >= 0) ::close(fd_);
        header_ = o.header_;
        offsets_ = std::move(o.offsets_);
        file_size_ = o.file_size_;
        fd_ = o.fd_;
        o.fd_ = -1;
    }
    return *this;
}

RilTable::~RilTable() {
    if (fd_ >= 0) ::close(fd_);
}

RilRecord RilTable::read_record(std::uint64_t index) const {
    if (index >= header_.record_count) {
        throw std::out_of_range("RIL: record index " + std::to_string(index) +
                                " out of range");
    }
    const std::size_t rec_size = record_byte_size(header_.mode, header_.top_k);
    const std::uint64_t off = offsets_[index];
    if (off + rec_size > file_size_) throw FormatError("RIL: record past end of file");
    std::vector<char> buf(rec_size);
    if (::pread(fd_, buf.data(), rec_size, static_cast<off_t>(off)) !=
        static_cast<ssize_t>(rec_size)) {
        throw FormatError("RIL: short read");
    }
    const char* p = buf.data();
    const char* end = p + rec_size;
    RilRecord r;
    r.image_id = get<std::uint64_t>(p, end);
    r.crop.x = get<float>(p, end);
    r.crop.y = get<float>(p, end);
    r.crop.w = get<float>(p, end);
    r.crop.h = get<float>(p, end);
    const std::uint8_t tag = get<std::uint8_t>(p, end);
    if (tag > 1) throw FormatError("RIL: reserved augment tag " + std::to_string(tag));
    r.augment = static_cast<AugmentTag>(tag);
    r.info_weight = get<float>(p, end);
    r.pseudo_label = get<std::uint32_t>(p, end);
    r.label.mode = header_.mode;
    r.label.class_count = header_.class_count;
    if (header_.mode == SparsifyMode::Full) {
        r.label.full_probs.resize(header_.class_count);
        for (std::uint32_t c = 0; c < header_.class_count; ++c) {
            const std::uint32_t id = get<std::uint32_t>(p, end);
            const float prob = get<float>(p, end);
            if (id != c) throw FormatError("RIL: full-mode class ids out of order");
            r.label.full_probs[c] = prob;
        }
    } else {
        for (std::uint32_t i = 0; i < header_.top_k; ++i) {
            r.label.top_indices.push_back(get<std::uint32_t>(p, end));
            r.label.top_probs.push_back(get<float>(p, end));
        }
        if (header_.mode == SparsifyMode::MS) r.label.tail_value = get<float>(p, end);
    }
    return r;
}

}  // namespace rd
